//! Flat container of named tensors.
//!
//! Layout, all little-endian:
//! magic `TREGCKPT1`, u32 record count, then per record: u32 name byte
//! length, UTF-8 name, u32 rank, u32 per dimension, then 32-bit floats in
//! row-major order (one per element).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TregError};

pub const MAGIC: &[u8; 9] = b"TREGCKPT1";

/// One named tensor record. Values are held as f64 in memory and stored as
/// f32 in the container.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorRecord {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(TregError::shape(
                format!("{n} elements for dims {dims:?}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(TensorRecord { dims, data })
    }

    pub fn scalar(v: f64) -> Self {
        TensorRecord { dims: vec![1], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        TensorRecord { dims: vec![data.len()], data }
    }
}

/// Checkpoint container. Records iterate in sorted name order so that a
/// round trip is byte-stable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    records: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, record: TensorRecord) {
        self.records.insert(name.into(), record);
    }

    pub fn get(&self, name: &str) -> Result<&TensorRecord> {
        self.records
            .get(name)
            .ok_or_else(|| TregError::MissingInput(format!("checkpoint tensor '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.records.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        let count = u32::try_from(self.records.len())
            .map_err(|_| TregError::Precondition("too many records".into()))?;
        w.write_all(&count.to_le_bytes())?;
        for (name, rec) in &self.records {
            let name_bytes = name.as_bytes();
            w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
            w.write_all(name_bytes)?;
            w.write_all(&(rec.dims.len() as u32).to_le_bytes())?;
            for d in &rec.dims {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            for v in &rec.data {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 9];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TregError::Parse(format!(
                "bad checkpoint magic {:?}",
                String::from_utf8_lossy(&magic)
            )));
        }
        let count = read_u32(&mut r)? as usize;
        let mut records = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|e| TregError::Parse(format!("tensor name not UTF-8: {e}")))?;
            let rank = read_u32(&mut r)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u32(&mut r)? as usize);
            }
            let n: usize = dims.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut buf = [0u8; 4];
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
            records.insert(name, TensorRecord { dims, data });
        }
        Ok(Checkpoint { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|_| {
            TregError::MissingInput(format!("checkpoint file {}", path.display()))
        })?;
        Checkpoint::read_from(std::io::BufReader::new(file))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_records() {
        let mut ck = Checkpoint::new();
        ck.insert(
            "a.weight",
            TensorRecord::new(vec![2, 3], vec![1.0, -2.5, 0.0, 3.25, 4.5, -0.125]).unwrap(),
        );
        ck.insert("b.bias", TensorRecord::vector(vec![0.5, 1.5]));
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..9], MAGIC);
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(ck, back);
    }

    #[test]
    fn write_is_byte_stable() {
        let mut ck = Checkpoint::new();
        ck.insert("z", TensorRecord::scalar(9.0));
        ck.insert("a", TensorRecord::scalar(1.0));
        let mut one = Vec::new();
        let mut two = Vec::new();
        ck.write_to(&mut one).unwrap();
        ck.write_to(&mut two).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn values_stored_as_f32() {
        let mut ck = Checkpoint::new();
        let precise = 0.1f64 + 1e-12;
        ck.insert("x", TensorRecord::scalar(precise));
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back.get("x").unwrap().data[0], precise as f32 as f64);
    }

    #[test]
    fn rejects_bad_magic() {
        let bytes = b"NOTACKPT1\x00\x00\x00\x00".to_vec();
        assert!(Checkpoint::read_from(bytes.as_slice()).is_err());
    }
}
