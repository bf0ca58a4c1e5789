//! Toy offline training: template/search pairs sampled from synthetic
//! sequences, optimized end to end with Adam. The total loss is the
//! weighted classification MSE against a Gaussian label plus the mean IoU
//! loss over the radius-limited positions around the target center.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{transform, transform_backward, StackedTemplates};
use crate::bbox::BBox;
use crate::classifier::{gaussian_label, score, score_backward};
use crate::error::{Result, TregError};
use crate::features::{extract_features, stem_geometry};
use crate::fusion::{depthwise_correlation, pixel_corr_attention, FusionKind};
use crate::params::ModelParams;
use crate::regression::{decode_box, iou_loss, training_targets, IouLossKind};
use crate::synth::Sequence;
use crate::tensor::{roi_pool, roi_pool_backward, FeatureMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fractions of the run at which the learning rate decays.
    pub decay_milestones: Vec<f64>,
    pub decay_factor: f64,
    pub cls_weight: f64,
    pub reg_weight: f64,
    /// Largest frame distance between template and search in a pair.
    pub max_pair_gap: usize,
    pub radius: usize,
    pub sigma: f64,
    pub iou_loss: IouLossKind,
    pub fusion: FusionKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 8,
            learning_rate: 3e-3,
            decay_milestones: vec![0.5, 0.75],
            decay_factor: 0.2,
            cls_weight: 1.0,
            reg_weight: 1.0,
            max_pair_gap: 10,
            radius: 2,
            sigma: 2.0,
            iou_loss: IouLossKind::OneMinus,
            fusion: FusionKind::TargetAwareTransformer,
            seed: 0,
        }
    }
}

/// A sequence with its per-frame stem features precomputed.
pub struct SeqData {
    pub features: Vec<FeatureMap>,
    pub boxes: Vec<BBox>,
}

/// Training data: synthetic sequences with cached features.
pub struct TrainDataset {
    pub sequences: Vec<SeqData>,
}

impl TrainDataset {
    pub fn from_sequences(sequences: &[Sequence]) -> Result<Self> {
        if sequences.is_empty() {
            return Err(TregError::Precondition("dataset is empty".into()));
        }
        let mut out = Vec::with_capacity(sequences.len());
        for seq in sequences {
            let features = seq
                .frames
                .iter()
                .map(|f| extract_features(&f.to_map()))
                .collect::<Result<Vec<_>>>()?;
            out.push(SeqData { features, boxes: seq.boxes.clone() });
        }
        Ok(TrainDataset { sequences: out })
    }
}

/// One template/search pair, by index into the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainPair {
    pub seq: usize,
    pub template_frame: usize,
    pub search_frame: usize,
}

/// Draws a pair of frames from one sequence within the configured gap.
pub fn sample_pair(
    dataset: &TrainDataset,
    rng: &mut ChaCha8Rng,
    max_gap: usize,
) -> Result<TrainPair> {
    if dataset.sequences.is_empty() {
        return Err(TregError::Precondition("dataset is empty".into()));
    }
    let seq = rng.gen_range(0..dataset.sequences.len());
    let len = dataset.sequences[seq].features.len();
    let template_frame = rng.gen_range(0..len);
    let lo = template_frame.saturating_sub(max_gap);
    let hi = (template_frame + max_gap).min(len - 1);
    let search_frame = rng.gen_range(lo..=hi);
    Ok(TrainPair { seq, template_frame, search_frame })
}

/// Loss components of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub cls: f64,
    pub reg: f64,
    pub total: f64,
}

/// Per-slot gradient buffers aligned with [`ModelParams`] slot order.
pub struct ModelGrads(pub Vec<Vec<f64>>);

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        ModelGrads((0..params.slot_count()).map(|i| vec![0.0; params.slot(i).len()]).collect())
    }

    fn add(&mut self, slot: usize, values: &[f64], scale: f64) {
        for (g, v) in self.0[slot].iter_mut().zip(values) {
            *g += scale * v;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for slot in &mut self.0 {
            for g in slot.iter_mut() {
                *g *= s;
            }
        }
    }
}

struct PairView<'a> {
    template_feat: &'a FeatureMap,
    template_box: BBox,
    search_feat: &'a FeatureMap,
    search_box: BBox,
}

fn pair_view<'a>(dataset: &'a TrainDataset, pair: &TrainPair) -> PairView<'a> {
    let seq = &dataset.sequences[pair.seq];
    PairView {
        template_feat: &seq.features[pair.template_frame],
        template_box: seq.boxes[pair.template_frame],
        search_feat: &seq.features[pair.search_frame],
        search_box: seq.boxes[pair.search_frame],
    }
}

fn fused_feature(
    params: &ModelParams,
    view: &PairView,
    pooled_template: &FeatureMap,
    fusion: FusionKind,
) -> Result<FeatureMap> {
    match fusion {
        FusionKind::TargetAwareTransformer => {
            let templates = StackedTemplates::new(vec![pooled_template.clone()])?;
            transform(view.search_feat, &templates, &params.attn)
        }
        FusionKind::DepthwiseCorrelation => {
            depthwise_correlation(view.search_feat, pooled_template)
        }
        FusionKind::PixelCorrAttention => pixel_corr_attention(view.search_feat, pooled_template),
        FusionKind::NoFusion => Ok(view.search_feat.clone()),
    }
}

/// The classifier forward pieces shared by the loss and gradient paths.
struct ClsForward {
    cls_search: FeatureMap,
    cls_template: FeatureMap,
    filter: FeatureMap,
    /// Search-side classifier features after the optional attention.
    scored_input: FeatureMap,
    score_map: FeatureMap,
    label: FeatureMap,
}

fn cls_forward(params: &ModelParams, view: &PairView, sigma: f64) -> Result<ClsForward> {
    let geom = stem_geometry();
    let cls_search = params.cls_enc.apply(view.search_feat)?;
    let cls_template = params.cls_enc.apply(view.template_feat)?;
    let template_grid_box = geom.box_to_grid(&view.template_box)?;
    let filter = roi_pool(&cls_template, &template_grid_box, 5)?;
    let scored_input = match &params.cls_attn {
        Some(attn) => {
            let templates = StackedTemplates::new(vec![filter.clone()])?;
            transform(&cls_search, &templates, attn)?
        }
        None => cls_search.clone(),
    };
    let score_map = score(&filter, &scored_input)?.into_map();
    let (gh, gw) = (cls_search.height(), cls_search.width());
    let center = geom.nearest_cell(view.search_box.cx, view.search_box.cy, gh, gw);
    let label = gaussian_label(center, sigma, (gh, gw))?.into_map();
    Ok(ClsForward { cls_search, cls_template, filter, scored_input, score_map, label })
}

fn mse(a: &FeatureMap, b: &FeatureMap) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        acc += d * d;
    }
    acc / a.data().len() as f64
}

/// Regression targets and offsets for one pair; shared forward logic.
fn reg_targets(
    view: &PairView,
    grid: (usize, usize),
    radius: usize,
) -> Result<Vec<((usize, usize), [f64; 4])>> {
    let geom = stem_geometry();
    let center = geom.nearest_cell(view.search_box.cx, view.search_box.cy, grid.0, grid.1);
    training_targets(&view.search_box, center, radius, &geom, grid.0, grid.1)
}

/// Forward-only loss evaluation for one pair.
pub fn pair_losses(
    params: &ModelParams,
    dataset: &TrainDataset,
    pair: &TrainPair,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let geom = stem_geometry();
    let view = pair_view(dataset, pair);
    let template_grid_box = geom.box_to_grid(&view.template_box)?;
    let pooled = roi_pool(view.template_feat, &template_grid_box, 5)?;
    let fused = fused_feature(params, &view, &pooled, cfg.fusion)?;
    let trace = params.head.forward(&fused)?;
    let offsets = trace.offsets();
    let grid = (fused.height(), fused.width());
    let targets = reg_targets(&view, grid, cfg.radius)?;
    let mut reg = 0.0;
    if !targets.is_empty() {
        for ((row, col), _) in &targets {
            let pred = decode_box(offsets, *row, *col, &geom)?;
            reg += iou_loss(&pred, &view.search_box, cfg.iou_loss).0;
        }
        reg /= targets.len() as f64;
    }
    let cls = {
        let f = cls_forward(params, &view, cfg.sigma)?;
        mse(&f.score_map, &f.label)
    };
    Ok((cls, reg))
}

/// Forward and backward for one pair; accumulates weighted gradients into
/// `grads` and returns the unweighted loss components.
pub fn pair_grads(
    params: &ModelParams,
    dataset: &TrainDataset,
    pair: &TrainPair,
    cfg: &TrainConfig,
    grads: &mut ModelGrads,
) -> Result<(f64, f64)> {
    let geom = stem_geometry();
    let view = pair_view(dataset, pair);
    let template_grid_box = geom.box_to_grid(&view.template_box)?;
    let pooled = roi_pool(view.template_feat, &template_grid_box, 5)?;

    // Regression branch.
    let fused = fused_feature(params, &view, &pooled, cfg.fusion)?;
    let trace = params.head.forward(&fused)?;
    let offsets = trace.offsets();
    let grid = (fused.height(), fused.width());
    let targets = reg_targets(&view, grid, cfg.radius)?;
    let mut reg = 0.0;
    if !targets.is_empty() {
        let scale = cfg.reg_weight / targets.len() as f64;
        let mut d_offsets = FeatureMap::zeros(4, grid.0, grid.1);
        for ((row, col), _) in &targets {
            let pred = decode_box(offsets, *row, *col, &geom)?;
            let (loss, d_ltrb) = iou_loss(&pred, &view.search_box, cfg.iou_loss);
            reg += loss;
            for (ch, g) in d_ltrb.iter().enumerate() {
                d_offsets.add_at(ch, *row, *col, g * scale);
            }
        }
        reg /= targets.len() as f64;
        let head_grads = params.head.backward(&fused, &trace, &d_offsets)?;
        grads.add(4, &head_grads.d_layer1_w, 1.0);
        grads.add(5, &head_grads.d_layer1_b, 1.0);
        grads.add(6, &head_grads.d_layer2_w, 1.0);
        grads.add(7, &head_grads.d_layer2_b, 1.0);
        grads.add(8, &head_grads.d_layer3_w, 1.0);
        grads.add(9, &head_grads.d_layer3_b, 1.0);
        if cfg.fusion == FusionKind::TargetAwareTransformer {
            let templates = StackedTemplates::new(vec![pooled.clone()])?;
            let attn_grads = transform_backward(
                view.search_feat,
                &templates,
                &params.attn,
                &head_grads.d_input,
            )?;
            grads.add(0, &attn_grads.d_query_w, 1.0);
            grads.add(1, &attn_grads.d_key_w, 1.0);
            grads.add(2, &attn_grads.d_value_w, 1.0);
            grads.add(3, &attn_grads.d_output_w, 1.0);
            // Search and template gradients stop at the fixed stem.
        }
    }

    // Classification branch.
    let f = cls_forward(params, &view, cfg.sigma)?;
    let cls = mse(&f.score_map, &f.label);
    let n = f.score_map.data().len() as f64;
    let mut d_score = f.score_map.clone();
    for (g, y) in d_score.data_mut().iter_mut().zip(f.label.data()) {
        *g = 2.0 * (*g - y) * cfg.cls_weight / n;
    }
    let (d_filter_score, d_scored_input) = score_backward(&f.filter, &f.scored_input, &d_score)?;
    let mut d_filter = d_filter_score;
    let d_cls_search = match &params.cls_attn {
        Some(attn) => {
            let templates = StackedTemplates::new(vec![f.filter.clone()])?;
            let attn_grads =
                transform_backward(&f.cls_search, &templates, attn, &d_scored_input)?;
            grads.add(11, &attn_grads.d_query_w, 1.0);
            grads.add(12, &attn_grads.d_key_w, 1.0);
            grads.add(13, &attn_grads.d_value_w, 1.0);
            grads.add(14, &attn_grads.d_output_w, 1.0);
            // The filter also acts as the attention template.
            d_filter.add_scaled(&attn_grads.d_templates[0], 1.0);
            attn_grads.d_search
        }
        None => d_scored_input,
    };
    let d_cls_template = roi_pool_backward(&f.cls_template, &template_grid_box, 5, &d_filter)?;
    let tape_s = params.cls_enc.backward(view.search_feat, &d_cls_search)?;
    grads.add(10, &tape_s.d_weights, 1.0);
    let tape_t = params.cls_enc.backward(view.template_feat, &d_cls_template)?;
    grads.add(10, &tape_t.d_weights, 1.0);

    Ok((cls, reg))
}

/// Adam optimizer with per-slot first and second moment buffers.
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        let m = (0..params.slot_count()).map(|i| vec![0.0; params.slot(i).len()]).collect();
        let v = (0..params.slot_count()).map(|i| vec![0.0; params.slot(i).len()]).collect();
        Adam { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, m, v }
    }

    pub fn apply(&mut self, params: &mut ModelParams, grads: &ModelGrads) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.slot_count() {
            let slot = params.slot_mut(i);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for ((p, g), (ms, vs)) in slot
                .iter_mut()
                .zip(grads.0[i].iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *ms = self.beta1 * *ms + (1.0 - self.beta1) * g;
                *vs = self.beta2 * *vs + (1.0 - self.beta2) * g * g;
                let mh = *ms / bc1;
                let vh = *vs / bc2;
                *p -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
            }
        }
    }
}

/// One optimization step over a batch: averaged gradients, one Adam
/// update. Returns the averaged loss components.
pub fn train_step(
    params: &mut ModelParams,
    dataset: &TrainDataset,
    batch: &[TrainPair],
    cfg: &TrainConfig,
    opt: &mut Adam,
) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(TregError::Precondition("empty batch".into()));
    }
    let mut grads = ModelGrads::zeros_like(params);
    let mut cls_sum = 0.0;
    let mut reg_sum = 0.0;
    for pair in batch {
        let (cls, reg) = pair_grads(params, dataset, pair, cfg, &mut grads)?;
        cls_sum += cls;
        reg_sum += reg;
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    let cls = cls_sum / n;
    let reg = reg_sum / n;
    let total = cfg.cls_weight * cls + cfg.reg_weight * reg;
    if !total.is_finite() {
        return Err(TregError::Numeric(format!(
            "non-finite loss at optimizer step {}: cls = {cls}, reg = {reg}",
            opt.step
        )));
    }
    if opt.learning_rate > 0.0 {
        opt.apply(params, &grads);
    }
    Ok(StepLosses { cls, reg, total })
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub cls: f64,
    pub reg: f64,
    pub total: f64,
}

/// Runs the full loop with milestone learning-rate decay. Returns the
/// trained parameters and the per-step loss log.
pub fn train(
    cfg: &TrainConfig,
    dataset: &TrainDataset,
    mut params: ModelParams,
) -> Result<(ModelParams, Vec<LogRow>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(&params, cfg.learning_rate);
    let milestones: Vec<usize> = cfg
        .decay_milestones
        .iter()
        .map(|f| (f * cfg.iterations as f64).floor() as usize)
        .collect();
    let mut log = Vec::with_capacity(cfg.iterations);
    for step in 0..cfg.iterations {
        if milestones.contains(&step) && step > 0 {
            opt.learning_rate *= cfg.decay_factor;
        }
        let batch: Vec<TrainPair> = (0..cfg.batch_size)
            .map(|_| sample_pair(dataset, &mut rng, cfg.max_pair_gap))
            .collect::<Result<_>>()?;
        let losses = train_step(&mut params, dataset, &batch, cfg, &mut opt)
            .map_err(|e| match e {
                TregError::Numeric(msg) => TregError::Numeric(format!("step {step}: {msg}")),
                other => other,
            })?;
        log.push(LogRow { step, cls: losses.cls, reg: losses.reg, total: losses.total });
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelConfig;
    use crate::synth::{gen_sequence, SequenceSpec};
    use crate::tensor::{close, finite_diff_grad};

    fn tiny_sequence(seed: u64) -> Sequence {
        gen_sequence(&SequenceSpec {
            name: format!("seq{seed}"),
            length: 8,
            image_size: 64,
            start_center: (32.0, 30.0),
            velocity: (0.5, 0.3),
            base_size: (18.0, 14.0),
            scale_range: (0.9, 1.1),
            scale_cycles: 1.0,
            aspect_amplitude: 0.1,
            aspect_cycles: 1.0,
            jitter: 0.0,
            distractor_count: 1,
            distractor_similarity: 0.5,
            noise_level: 0.01,
            seed,
        })
        .unwrap()
    }

    fn tiny_dataset() -> TrainDataset {
        TrainDataset::from_sequences(&[tiny_sequence(1), tiny_sequence(2)]).unwrap()
    }

    #[test]
    fn sample_pair_respects_gap_and_determinism() {
        let ds = tiny_dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = sample_pair(&ds, &mut rng, 3).unwrap();
            assert!(p.template_frame.abs_diff(p.search_frame) <= 3);
        }
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            assert_eq!(
                sample_pair(&ds, &mut a, 4).unwrap(),
                sample_pair(&ds, &mut b, 4).unwrap()
            );
        }
        // Gap 0 pins both frames together.
        let p = sample_pair(&ds, &mut rng, 0).unwrap();
        assert_eq!(p.template_frame, p.search_frame);
    }

    #[test]
    fn template_pool_matches_gt_box() {
        let ds = tiny_dataset();
        let geom = stem_geometry();
        let view = pair_view(&ds, &TrainPair { seq: 0, template_frame: 2, search_frame: 2 });
        let grid_box = geom.box_to_grid(&view.template_box).unwrap();
        let pooled = roi_pool(view.template_feat, &grid_box, 5).unwrap();
        assert_eq!(pooled.shape(), (view.template_feat.channels(), 5, 5));
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let ds = tiny_dataset();
        let cfg = TrainConfig { learning_rate: 0.0, ..Default::default() };
        let mut params = ModelParams::init(ModelConfig::default(), 3);
        let snapshot = params.clone();
        let mut opt = Adam::new(&params, 0.0);
        let batch = vec![TrainPair { seq: 0, template_frame: 1, search_frame: 2 }];
        let losses = train_step(&mut params, &ds, &batch, &cfg, &mut opt).unwrap();
        assert_eq!(params, snapshot);
        assert!(losses.total.is_finite());
    }

    #[test]
    fn loss_decomposition_holds() {
        let ds = tiny_dataset();
        let cfg = TrainConfig { cls_weight: 0.7, learning_rate: 0.0, ..Default::default() };
        let mut params = ModelParams::init(ModelConfig::default(), 4);
        let mut opt = Adam::new(&params, 0.0);
        let batch = vec![
            TrainPair { seq: 0, template_frame: 0, search_frame: 1 },
            TrainPair { seq: 1, template_frame: 3, search_frame: 5 },
        ];
        let l = train_step(&mut params, &ds, &batch, &cfg, &mut opt).unwrap();
        assert!(close(l.total, 0.7 * l.cls + 1.0 * l.reg, 1e-9, 1e-12));
    }

    #[test]
    fn forward_paths_agree() {
        let ds = tiny_dataset();
        for fusion in [
            FusionKind::TargetAwareTransformer,
            FusionKind::DepthwiseCorrelation,
            FusionKind::PixelCorrAttention,
            FusionKind::NoFusion,
        ] {
            let cfg = TrainConfig { fusion, ..Default::default() };
            let params = ModelParams::init(ModelConfig::default(), 6);
            let pair = TrainPair { seq: 0, template_frame: 2, search_frame: 4 };
            let (cls_a, reg_a) = pair_losses(&params, &ds, &pair, &cfg).unwrap();
            let mut grads = ModelGrads::zeros_like(&params);
            let (cls_b, reg_b) = pair_grads(&params, &ds, &pair, &cfg, &mut grads).unwrap();
            assert!(close(cls_a, cls_b, 1e-12, 1e-15), "{fusion:?}");
            assert!(close(reg_a, reg_b, 1e-12, 1e-15), "{fusion:?}");
        }
    }

    // Central-difference oracle over every parameter slot.
    #[test]
    fn step_gradients_match_finite_differences() {
        let ds = tiny_dataset();
        for (fusion, tat_cls) in [
            (FusionKind::TargetAwareTransformer, false),
            (FusionKind::TargetAwareTransformer, true),
            (FusionKind::DepthwiseCorrelation, false),
        ] {
            let cfg = TrainConfig { fusion, cls_weight: 0.8, ..Default::default() };
            let params = ModelParams::init(ModelConfig { tat_cls, ..Default::default() }, 7);
            let batch = [
                TrainPair { seq: 0, template_frame: 1, search_frame: 3 },
                TrainPair { seq: 1, template_frame: 2, search_frame: 2 },
            ];
            let mut grads = ModelGrads::zeros_like(&params);
            for pair in &batch {
                pair_grads(&params, &ds, pair, &cfg, &mut grads).unwrap();
            }
            grads.scale(1.0 / batch.len() as f64);

            let flat = params.flatten();
            let fd = finite_diff_grad(
                |vals| {
                    let mut p = params.clone();
                    p.unflatten(vals).unwrap();
                    let mut total = 0.0;
                    for pair in &batch {
                        let (cls, reg) = pair_losses(&p, &ds, pair, &cfg).unwrap();
                        total += cfg.cls_weight * cls + cfg.reg_weight * reg;
                    }
                    total / batch.len() as f64
                },
                &flat,
                1e-5,
            )
            .unwrap();
            let analytic: Vec<f64> = grads.0.iter().flatten().copied().collect();
            assert_eq!(analytic.len(), fd.len());
            for (i, (a, f)) in analytic.iter().zip(fd.iter()).enumerate() {
                assert!(
                    close(*a, *f, 1e-3, 1e-7),
                    "{fusion:?} tat_cls={tat_cls} param {i}: analytic {a} vs fd {f}"
                );
            }
        }
    }

    #[test]
    fn every_group_gets_gradient_on_generic_batch() {
        let ds = tiny_dataset();
        let cfg = TrainConfig::default();
        let params = ModelParams::init(ModelConfig::default(), 8);
        let mut grads = ModelGrads::zeros_like(&params);
        let batch = [
            TrainPair { seq: 0, template_frame: 0, search_frame: 2 },
            TrainPair { seq: 1, template_frame: 1, search_frame: 4 },
        ];
        for pair in &batch {
            pair_grads(&params, &ds, pair, &cfg, &mut grads).unwrap();
        }
        for (i, slot) in grads.0.iter().enumerate() {
            let norm: f64 = slot.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm > 0.0, "slot {} has zero gradient", params.slot_name(i));
        }
    }

    #[test]
    fn train_zero_iterations_returns_init() {
        let ds = tiny_dataset();
        let cfg = TrainConfig { iterations: 0, ..Default::default() };
        let init = ModelParams::init(ModelConfig::default(), 9);
        let (out, log) = train(&cfg, &ds, init.clone()).unwrap();
        assert_eq!(out, init);
        assert!(log.is_empty());
    }

    #[test]
    fn train_is_deterministic_and_logs_every_step() {
        let ds = tiny_dataset();
        let cfg = TrainConfig { iterations: 5, batch_size: 2, ..Default::default() };
        let init = ModelParams::init(ModelConfig::default(), 10);
        let (a, log_a) = train(&cfg, &ds, init.clone()).unwrap();
        let (b, log_b) = train(&cfg, &ds, init).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
        assert_eq!(log_a.len(), 5);
    }
}
