//! File formats: binary PGM images, ground-truth and box-line text files,
//! CSV tables, and dataset directory layout.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use crate::bbox::BBox;
use crate::error::{Result, TregError};
use crate::synth::{Frame, Sequence};
use crate::tensor::FeatureMap;

/// Writes a frame as binary PGM (P5, maxval 255).
pub fn write_pgm(path: &Path, frame: &Frame) -> Result<()> {
    let mut out = Vec::with_capacity(frame.pixels.len() + 32);
    out.extend_from_slice(format!("P5\n{} {}\n255\n", frame.width, frame.height).as_bytes());
    out.extend_from_slice(&frame.pixels);
    fs::write(path, out)?;
    Ok(())
}

/// Writes a real-valued single-channel map as PGM after min-max scaling to
/// 0..=255. A constant map becomes all zeros.
pub fn write_pgm_scaled(path: &Path, map: &FeatureMap) -> Result<()> {
    if map.channels() != 1 {
        return Err(TregError::shape("1 channel", map.shape_str()));
    }
    let lo = map.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let pixels: Vec<u8> = map
        .data()
        .iter()
        .map(|&v| (((v - lo) * scale).round()).clamp(0.0, 255.0) as u8)
        .collect();
    write_pgm(
        path,
        &Frame { width: map.width(), height: map.height(), pixels },
    )
}

/// Reads a binary (P5) or ASCII (P2) PGM with maxval up to 255.
pub fn read_pgm(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path)
        .map_err(|_| TregError::MissingInput(format!("PGM file {}", path.display())))?;
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        // Skip whitespace and '#' comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(TregError::Parse(format!("truncated PGM {}", path.display())));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let width: usize = token()?.parse().map_err(|e| TregError::Parse(format!("PGM width: {e}")))?;
    let height: usize =
        token()?.parse().map_err(|e| TregError::Parse(format!("PGM height: {e}")))?;
    let maxval: usize =
        token()?.parse().map_err(|e| TregError::Parse(format!("PGM maxval: {e}")))?;
    if maxval == 0 || maxval > 255 {
        return Err(TregError::Parse(format!("unsupported PGM maxval {maxval}")));
    }
    match magic.as_str() {
        "P5" => {
            pos += 1; // exactly one whitespace byte after maxval
            let need = width * height;
            if bytes.len() < pos + need {
                return Err(TregError::Parse(format!("truncated PGM {}", path.display())));
            }
            Ok(Frame { width, height, pixels: bytes[pos..pos + need].to_vec() })
        }
        "P2" => {
            let mut pixels = Vec::with_capacity(width * height);
            for _ in 0..width * height {
                let v: usize =
                    token()?.parse().map_err(|e| TregError::Parse(format!("PGM pixel: {e}")))?;
                pixels.push(v.min(255) as u8);
            }
            Ok(Frame { width, height, pixels })
        }
        other => Err(TregError::Parse(format!("not a PGM (magic {other})"))),
    }
}

/// Ground-truth lines: `x1,y1,x2,y2` per frame.
pub fn write_groundtruth(path: &Path, boxes: &[BBox]) -> Result<()> {
    let mut out = String::new();
    for b in boxes {
        let (x1, y1, x2, y2) = b.corners();
        out.push_str(&format!("{x1:.4},{y1:.4},{x2:.4},{y2:.4}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_groundtruth(path: &Path) -> Result<Vec<BBox>> {
    let file = fs::File::open(path)
        .map_err(|_| TregError::MissingInput(format!("groundtruth file {}", path.display())))?;
    let mut boxes = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(TregError::Parse(format!(
                "groundtruth line {} is not x1,y1,x2,y2: '{line}'",
                i + 1
            )));
        }
        let vals: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| TregError::Parse(format!("groundtruth line {}: {e}", i + 1)))?;
        boxes.push(BBox::from_corners(vals[0], vals[1], vals[2], vals[3])?);
    }
    if boxes.is_empty() {
        return Err(TregError::Parse(format!("no boxes in {}", path.display())));
    }
    Ok(boxes)
}

/// Box output lines: `frame_index,x1,y1,x2,y2` per frame.
pub fn write_boxes(path: &Path, boxes: &[BBox]) -> Result<()> {
    let mut out = String::new();
    for (i, b) in boxes.iter().enumerate() {
        let (x1, y1, x2, y2) = b.corners();
        out.push_str(&format!("{i},{x1:.4},{y1:.4},{x2:.4},{y2:.4}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_boxes(path: &Path) -> Result<Vec<BBox>> {
    let file = fs::File::open(path)
        .map_err(|_| TregError::MissingInput(format!("box file {}", path.display())))?;
    let mut boxes = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(TregError::Parse(format!(
                "box line {} is not frame,x1,y1,x2,y2: '{line}'",
                i + 1
            )));
        }
        let vals: Vec<f64> = parts[1..]
            .iter()
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| TregError::Parse(format!("box line {}: {e}", i + 1)))?;
        boxes.push(BBox::from_corners(vals[0], vals[1], vals[2], vals[3])?);
    }
    Ok(boxes)
}

/// Writes one sequence as `frame_0000.pgm ...` plus `groundtruth.txt`.
pub fn write_sequence_dir(dir: &Path, seq: &Sequence) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, frame) in seq.frames.iter().enumerate() {
        write_pgm(&dir.join(format!("frame_{i:04}.pgm")), frame)?;
    }
    write_groundtruth(&dir.join("groundtruth.txt"), &seq.boxes)
}

/// Loads a sequence directory written by [`write_sequence_dir`].
pub fn read_sequence_dir(dir: &Path) -> Result<Sequence> {
    let boxes = read_groundtruth(&dir.join("groundtruth.txt"))?;
    let mut frame_paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().map(|e| e == "pgm").unwrap_or(false)
                && p.file_name()
                    .map(|n| n.to_string_lossy().starts_with("frame_"))
                    .unwrap_or(false)
        })
        .collect();
    frame_paths.sort();
    if frame_paths.len() != boxes.len() {
        return Err(TregError::Parse(format!(
            "{}: {} frames but {} ground-truth boxes",
            dir.display(),
            frame_paths.len(),
            boxes.len()
        )));
    }
    let frames = frame_paths
        .iter()
        .map(|p| read_pgm(p))
        .collect::<Result<Vec<_>>>()?;
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());
    Ok(Sequence { name, frames, boxes })
}

/// Finds every sequence directory (any directory containing
/// `groundtruth.txt`) under `root`, sorted by path.
pub fn discover_sequences(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.exists() {
        return Err(TregError::MissingInput(format!("dataset directory {}", root.display())));
    }
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join("groundtruth.txt").is_file() {
            found.push(dir);
            continue;
        }
        if dir.is_dir() {
            for entry in fs::read_dir(&dir)? {
                let p = entry?.path();
                if p.is_dir() {
                    stack.push(p);
                }
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(TregError::MissingInput(format!(
            "no sequences (groundtruth.txt) under {}",
            root.display()
        )));
    }
    Ok(found)
}

/// Writes rows as CSV with the canonical `config,auc,precision` header.
pub fn write_metrics_csv(path: &Path, rows: &[(String, f64, f64)]) -> Result<()> {
    let mut out = String::from("config,auc,precision\n");
    for (name, auc, precision) in rows {
        out.push_str(&format!("{name},{auc:.6},{precision:.6}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a `config,auc,precision` CSV back into rows.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<(String, f64, f64)>> {
    let mut text = String::new();
    fs::File::open(path)
        .map_err(|_| TregError::MissingInput(format!("CSV {}", path.display())))?
        .read_to_string(&mut text)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != "config,auc,precision" {
                return Err(TregError::Parse(format!("unexpected CSV header '{line}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(TregError::Parse(format!("CSV line {}: '{line}'", i + 1)));
        }
        rows.push((
            parts[0].to_string(),
            parts[1].parse().map_err(|e| TregError::Parse(format!("CSV auc: {e}")))?,
            parts[2].parse().map_err(|e| TregError::Parse(format!("CSV precision: {e}")))?,
        ));
    }
    Ok(rows)
}

/// Writes the training loss log as `step,cls_loss,reg_loss,total`.
pub fn write_loss_log(path: &Path, log: &[crate::trainer::LogRow]) -> Result<()> {
    let mut out = String::from("step,cls_loss,reg_loss,total\n");
    for row in log {
        out.push_str(&format!(
            "{},{:.9e},{:.9e},{:.9e}\n",
            row.step, row.cls, row.reg, row.total
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes a single-channel map as `row,col,value` CSV.
pub fn write_map_csv(path: &Path, map: &FeatureMap) -> Result<()> {
    if map.channels() != 1 {
        return Err(TregError::shape("1 channel", map.shape_str()));
    }
    let mut out = String::from("row,col,value\n");
    for r in 0..map.height() {
        for c in 0..map.width() {
            out.push_str(&format!("{r},{c},{:.9e}\n", map.get(0, r, c)));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Creates `dir`, failing if it already exists non-empty unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            return Err(TregError::Config(format!(
                "output directory {} exists and is not empty (use --force)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Writer helper that formats through `std::fmt`.
pub fn write_string(path: &Path, content: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(content.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_sequence, SequenceSpec};

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("treg-io-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn sample_sequence() -> Sequence {
        gen_sequence(&SequenceSpec {
            name: "io".into(),
            length: 3,
            image_size: 32,
            start_center: (16.0, 16.0),
            velocity: (0.0, 0.0),
            base_size: (10.0, 8.0),
            scale_range: (1.0, 1.0),
            scale_cycles: 1.0,
            aspect_amplitude: 0.0,
            aspect_cycles: 1.0,
            jitter: 0.0,
            distractor_count: 0,
            distractor_similarity: 0.0,
            noise_level: 0.0,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn pgm_round_trip() {
        let dir = temp_dir("pgm");
        let seq = sample_sequence();
        let path = dir.join("f.pgm");
        write_pgm(&path, &seq.frames[0]).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back, seq.frames[0]);
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn pgm_scaled_constant_is_black() {
        let dir = temp_dir("pgmflat");
        let map = FeatureMap::from_fn(1, 4, 4, |_, _, _| 3.5);
        let path = dir.join("m.pgm");
        write_pgm_scaled(&path, &map).unwrap();
        let back = read_pgm(&path).unwrap();
        assert!(back.pixels.iter().all(|&p| p == 0));
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn sequence_dir_round_trip() {
        let dir = temp_dir("seq");
        let seq = sample_sequence();
        let seq_dir = dir.join("io");
        write_sequence_dir(&seq_dir, &seq).unwrap();
        let back = read_sequence_dir(&seq_dir).unwrap();
        assert_eq!(back.frames, seq.frames);
        assert_eq!(back.boxes.len(), seq.boxes.len());
        for (a, b) in back.boxes.iter().zip(&seq.boxes) {
            assert!((a.cx - b.cx).abs() < 1e-3);
            assert!((a.w - b.w).abs() < 1e-3);
        }
        let found = discover_sequences(&dir).unwrap();
        assert_eq!(found, vec![seq_dir]);
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn metrics_csv_round_trip() {
        let dir = temp_dir("csv");
        let rows = vec![("tat".to_string(), 0.5, 0.75), ("none".to_string(), 0.25, 0.5)];
        let path = dir.join("m.csv");
        write_metrics_csv(&path, &rows).unwrap();
        let back = read_metrics_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "tat");
        assert!((back[0].1 - 0.5).abs() < 1e-9);
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn prepare_out_dir_respects_force() {
        let dir = temp_dir("prep");
        let out = dir.join("out");
        prepare_out_dir(&out, false).unwrap();
        fs::write(out.join("x"), "1").unwrap();
        assert!(prepare_out_dir(&out, false).is_err());
        prepare_out_dir(&out, true).unwrap();
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn boxes_round_trip() {
        let dir = temp_dir("boxes");
        let boxes = vec![
            BBox::from_corners(1.0, 2.0, 5.0, 8.0).unwrap(),
            BBox::from_corners(3.25, 4.5, 6.0, 9.0).unwrap(),
        ];
        let path = dir.join("b.txt");
        write_boxes(&path, &boxes).unwrap();
        let back = read_boxes(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back[1].cx - boxes[1].cx).abs() < 1e-3);
        fs::remove_dir_all(dir).unwrap();
    }
}
