//! All learnable tensors of the tracker, with seeded initialization and
//! checkpoint persistence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionParams;
use crate::checkpoint::{Checkpoint, TensorRecord};
use crate::error::{Result, TregError};
use crate::regression::RegressionHead;
use crate::tensor::PointwiseLinear;

/// Architectural hyperparameters; everything else is derived.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Feature channels C entering the attention block and the head.
    pub channels: usize,
    /// Embedding width D of the attention encoders.
    pub embed_dim: usize,
    /// Hidden width of the regression head.
    pub head_hidden: usize,
    /// Output channels of the classifier encoder.
    pub cls_channels: usize,
    /// Wire a second attention block into the classifier path.
    pub tat_cls: bool,
    /// Average (rather than sum) the attention residual.
    pub average_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let channels = crate::features::STEM_CHANNELS;
        ModelConfig {
            channels,
            embed_dim: AttentionParams::default_embed_dim(channels),
            head_hidden: 16,
            cls_channels: 4,
            tat_cls: false,
            average_residual: false,
        }
    }
}

/// The learnable parameter set: attention encoders, regression head, and
/// the classifier encoder (plus the optional classifier-side attention).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub attn: AttentionParams,
    pub head: RegressionHead,
    pub cls_enc: PointwiseLinear,
    pub cls_attn: Option<AttentionParams>,
}

fn uniform_layer(
    rng: &mut ChaCha8Rng,
    out_c: usize,
    in_c: usize,
    with_bias: bool,
) -> PointwiseLinear {
    let bound = 1.0 / (in_c as f64).sqrt();
    let weights = (0..out_c * in_c).map(|_| rng.gen_range(-bound..bound)).collect();
    let bias = with_bias.then(|| (0..out_c).map(|_| rng.gen_range(-bound..bound)).collect());
    PointwiseLinear::new(out_c, in_c, weights, bias).expect("valid layer dims")
}

fn init_attention(rng: &mut ChaCha8Rng, c: usize, d: usize, average_residual: bool) -> AttentionParams {
    let mut p = AttentionParams::new(
        uniform_layer(rng, d, c, false),
        uniform_layer(rng, d, c, false),
        uniform_layer(rng, d, c, false),
        uniform_layer(rng, c, d, false),
    )
    .expect("valid attention dims");
    p.average_residual = average_residual;
    p
}

impl ModelParams {
    /// Seeded initialization: every weight and bias uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`. The final head bias is then
    /// offset by `ln 8` so initial boxes start around 8 px instead of 1 px.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let attn = init_attention(&mut rng, c, config.embed_dim, config.average_residual);
        let mut l3 = uniform_layer(&mut rng, 4, config.head_hidden, true);
        for b in l3.bias_mut().unwrap() {
            *b += 8.0f64.ln();
        }
        let head = RegressionHead::new(
            uniform_layer(&mut rng, config.head_hidden, c, true),
            uniform_layer(&mut rng, config.head_hidden, config.head_hidden, true),
            l3,
        )
        .expect("valid head dims");
        let cls_enc = uniform_layer(&mut rng, config.cls_channels, c, false);
        let cls_attn = config.tat_cls.then(|| {
            init_attention(
                &mut rng,
                config.cls_channels,
                AttentionParams::default_embed_dim(config.cls_channels),
                config.average_residual,
            )
        });
        ModelParams { config, attn, head, cls_enc, cls_attn }
    }

    /// Number of parameter slots (weight or bias vectors).
    pub fn slot_count(&self) -> usize {
        11 + if self.cls_attn.is_some() { 4 } else { 0 }
    }

    pub fn slot_name(&self, i: usize) -> &'static str {
        match i {
            0 => "attn.query.weight",
            1 => "attn.key.weight",
            2 => "attn.value.weight",
            3 => "attn.output.weight",
            4 => "head.layer1.weight",
            5 => "head.layer1.bias",
            6 => "head.layer2.weight",
            7 => "head.layer2.bias",
            8 => "head.layer3.weight",
            9 => "head.layer3.bias",
            10 => "cls.encoder.weight",
            11 => "cls_attn.query.weight",
            12 => "cls_attn.key.weight",
            13 => "cls_attn.value.weight",
            14 => "cls_attn.output.weight",
            _ => panic!("slot index {i} out of range"),
        }
    }

    pub fn slot(&self, i: usize) -> &[f64] {
        match i {
            0 => self.attn.query_enc.weights(),
            1 => self.attn.key_enc.weights(),
            2 => self.attn.value_enc.weights(),
            3 => self.attn.output.weights(),
            4 => self.head.layer1.weights(),
            5 => self.head.layer1.bias().unwrap(),
            6 => self.head.layer2.weights(),
            7 => self.head.layer2.bias().unwrap(),
            8 => self.head.layer3.weights(),
            9 => self.head.layer3.bias().unwrap(),
            10 => self.cls_enc.weights(),
            11 => self.cls_attn.as_ref().unwrap().query_enc.weights(),
            12 => self.cls_attn.as_ref().unwrap().key_enc.weights(),
            13 => self.cls_attn.as_ref().unwrap().value_enc.weights(),
            14 => self.cls_attn.as_ref().unwrap().output.weights(),
            _ => panic!("slot index {i} out of range"),
        }
    }

    pub fn slot_mut(&mut self, i: usize) -> &mut [f64] {
        match i {
            0 => self.attn.query_enc.weights_mut(),
            1 => self.attn.key_enc.weights_mut(),
            2 => self.attn.value_enc.weights_mut(),
            3 => self.attn.output.weights_mut(),
            4 => self.head.layer1.weights_mut(),
            5 => self.head.layer1.bias_mut().unwrap(),
            6 => self.head.layer2.weights_mut(),
            7 => self.head.layer2.bias_mut().unwrap(),
            8 => self.head.layer3.weights_mut(),
            9 => self.head.layer3.bias_mut().unwrap(),
            10 => self.cls_enc.weights_mut(),
            11 => self.cls_attn.as_mut().unwrap().query_enc.weights_mut(),
            12 => self.cls_attn.as_mut().unwrap().key_enc.weights_mut(),
            13 => self.cls_attn.as_mut().unwrap().value_enc.weights_mut(),
            14 => self.cls_attn.as_mut().unwrap().output.weights_mut(),
            _ => panic!("slot index {i} out of range"),
        }
    }

    /// All parameters concatenated in slot order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..self.slot_count() {
            out.extend_from_slice(self.slot(i));
        }
        out
    }

    /// Writes a flat vector produced by [`ModelParams::flatten`] back.
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        let mut offset = 0;
        for i in 0..self.slot_count() {
            let len = self.slot(i).len();
            if offset + len > flat.len() {
                return Err(TregError::shape(
                    format!("{} flat params", self.flatten().len()),
                    format!("{}", flat.len()),
                ));
            }
            self.slot_mut(i).copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        if offset != flat.len() {
            return Err(TregError::shape(
                format!("{offset} flat params"),
                format!("{}", flat.len()),
            ));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        let cfg = &self.config;
        ck.insert(
            "model.meta",
            TensorRecord::vector(vec![
                cfg.channels as f64,
                cfg.embed_dim as f64,
                cfg.head_hidden as f64,
                cfg.cls_channels as f64,
                if cfg.tat_cls { 1.0 } else { 0.0 },
                if cfg.average_residual { 1.0 } else { 0.0 },
            ]),
        );
        for i in 0..self.slot_count() {
            ck.insert(
                self.slot_name(i),
                TensorRecord::vector(self.slot(i).to_vec()),
            );
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = &ck.get("model.meta")?.data;
        if meta.len() != 6 {
            return Err(TregError::Parse("model.meta record malformed".into()));
        }
        let config = ModelConfig {
            channels: meta[0] as usize,
            embed_dim: meta[1] as usize,
            head_hidden: meta[2] as usize,
            cls_channels: meta[3] as usize,
            tat_cls: meta[4] != 0.0,
            average_residual: meta[5] != 0.0,
        };
        let mut params = ModelParams::init(config, 0);
        for i in 0..params.slot_count() {
            let rec = ck.get(params.slot_name(i))?;
            if rec.data.len() != params.slot(i).len() {
                return Err(TregError::shape(
                    format!("{} values for {}", params.slot(i).len(), params.slot_name(i)),
                    format!("{}", rec.data.len()),
                ));
            }
            params.slot_mut(i).copy_from_slice(&rec.data);
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        ModelParams::from_checkpoint(&Checkpoint::load(path)?)
    }
}
