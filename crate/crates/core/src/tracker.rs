//! The per-frame tracking pipeline: online classifier for the center,
//! fused features and the regression head for the box, template queue
//! updates from confident observations.

use serde::{Deserialize, Serialize};

use crate::attention::{attention_map, transform, StackedTemplates};
use crate::bbox::BBox;
use crate::classifier::{fit_filter, gaussian_label, locate, score, FitOptions, OnlineFilter, ScoreMap};
use crate::error::{Result, TregError};
use crate::features::{extract_features, stem_geometry};
use crate::fusion::{depthwise_correlation, pixel_corr_attention, FusionKind};
use crate::metrics::TrackResult;
use crate::params::ModelParams;
use crate::queue::{init_augmentations, QueueConfig, TemplateQueueState};
use crate::regression::{infer_box, GridGeometry, InferMode};
use crate::synth::{Frame, Sequence};
use crate::tensor::{roi_pool, FeatureMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerOptions {
    pub fusion: FusionKind,
    pub queue: QueueConfig,
    pub infer_mode: InferMode,
    pub sigma: f64,
    pub lambda: f64,
    pub filter_iterations: usize,
    /// Refit the online filter every this many frames.
    pub refresh_interval: u64,
    /// Minimum confidence for a sample to enter the classifier set.
    pub refresh_confidence: f64,
    /// Classifier sample set capacity (FIFO).
    pub sample_capacity: usize,
    pub seed: u64,
}

impl Default for TrackerOptions {
    fn default() -> Self {
        TrackerOptions {
            fusion: FusionKind::TargetAwareTransformer,
            queue: QueueConfig::default(),
            infer_mode: InferMode::Argmax,
            sigma: 2.0,
            lambda: 1e-3,
            filter_iterations: 40,
            refresh_interval: 10,
            refresh_confidence: 0.5,
            sample_capacity: 15,
            seed: 0,
        }
    }
}

/// Diagnostics for one tracked frame.
pub struct TrackStep {
    pub bbox: BBox,
    pub confidence: f64,
    pub score_map: ScoreMap,
    pub attention: Option<FeatureMap>,
}

/// Online tracker state for one sequence.
pub struct Tracker {
    params: ModelParams,
    opts: TrackerOptions,
    geom: GridGeometry,
    queue: TemplateQueueState,
    filter: OnlineFilter,
    cls_samples: Vec<(FeatureMap, ScoreMap)>,
    /// Classifier-side attention template, fixed from the first frame.
    cls_template: Option<FeatureMap>,
    last_box: BBox,
}

impl Tracker {
    /// Initializes from the first frame and its ground-truth box (image
    /// coordinates): augments the frame, builds the static template queue,
    /// and fits the online classifier filter on the augmented samples.
    pub fn init(
        params: ModelParams,
        first_frame: &Frame,
        gt_box: BBox,
        opts: TrackerOptions,
    ) -> Result<Self> {
        opts.queue.validate()?;
        let geom = stem_geometry();
        let features = extract_features(&first_frame.to_map())?;
        let grid_box = geom.box_to_grid(&gt_box)?;
        let queue =
            TemplateQueueState::init_static(&features, &grid_box, opts.seed, opts.queue)?;

        // The same augmented views feed the classifier.
        let augmented =
            init_augmentations(&features, &grid_box, opts.seed, opts.queue.augment_count)?;
        let (gh, gw) = (features.height(), features.width());
        let cls_template = if params.cls_attn.is_some() {
            let cls_feat = params.cls_enc.apply(&features)?;
            Some(roi_pool(&cls_feat, &grid_box, opts.queue.template_size)?)
        } else {
            None
        };
        let mut cls_samples = Vec::with_capacity(augmented.len());
        for aug in &augmented {
            let encoded = params.cls_enc.apply(&aug.map)?;
            let encoded = match (&params.cls_attn, &cls_template) {
                (Some(attn), Some(tmpl)) => {
                    let templates = StackedTemplates::new(vec![tmpl.clone()])?;
                    transform(&encoded, &templates, attn)?
                }
                _ => encoded,
            };
            let center = geom_cell(&aug.bbox, gh, gw);
            let label = gaussian_label(center, opts.sigma, (gh, gw))?;
            cls_samples.push((encoded, label));
        }
        let filter = fit_filter(
            &cls_samples,
            opts.lambda,
            &FitOptions {
                filter_size: opts.queue.template_size,
                iterations: opts.filter_iterations,
                step: 1.0,
            },
        )?;
        Ok(Tracker {
            params,
            opts,
            geom,
            queue,
            filter,
            cls_samples,
            cls_template,
            last_box: gt_box,
        })
    }

    pub fn queue(&self) -> &TemplateQueueState {
        &self.queue
    }

    fn fused_feature(&self, features: &FeatureMap) -> Result<FeatureMap> {
        match self.opts.fusion {
            FusionKind::TargetAwareTransformer => {
                let templates = self.queue.as_stacked()?;
                transform(features, &templates, &self.params.attn)
            }
            FusionKind::DepthwiseCorrelation => {
                depthwise_correlation(features, self.queue.primary_template()?)
            }
            FusionKind::PixelCorrAttention => {
                pixel_corr_attention(features, self.queue.primary_template()?)
            }
            FusionKind::NoFusion => Ok(features.clone()),
        }
    }

    fn cls_features(&self, features: &FeatureMap) -> Result<FeatureMap> {
        let encoded = self.params.cls_enc.apply(features)?;
        match (&self.params.cls_attn, &self.cls_template) {
            (Some(attn), Some(tmpl)) => {
                let templates = StackedTemplates::new(vec![tmpl.clone()])?;
                transform(&encoded, &templates, attn)
            }
            _ => Ok(encoded),
        }
    }

    /// Tracks one frame. `frame_index` must increase by one per call,
    /// starting at 1 for the frame after initialization.
    pub fn track_frame(
        &mut self,
        frame: &Frame,
        frame_index: u64,
        want_attention: bool,
    ) -> Result<TrackStep> {
        let features = extract_features(&frame.to_map())?;
        let (gh, gw) = (features.height(), features.width());

        // Classify and locate the center.
        let cls_feat = self.cls_features(&features)?;
        let score_map = score(&self.filter.weights, &cls_feat)?;
        let (peak, confidence) = locate(&score_map);

        // Regress the box on the fused feature.
        let fused = self.fused_feature(&features)?;
        let offsets = self.params.head.forward(&fused)?.offsets().clone();
        let bbox = infer_box(&offsets, &score_map, &self.geom, self.opts.infer_mode)?;
        self.last_box = bbox;

        // Queue bookkeeping from the predicted box.
        if let Ok(grid_box) = self.geom.box_to_grid(&bbox) {
            if let Ok(pooled) = roi_pool(&features, &grid_box, self.opts.queue.template_size) {
                self.queue.observe(frame_index, pooled, confidence)?;
                self.queue.maybe_commit(frame_index);
            }
        }

        // Periodic classifier refresh from confident frames.
        if self.opts.refresh_interval > 0
            && frame_index % self.opts.refresh_interval == 0
            && confidence >= self.opts.refresh_confidence
        {
            let label = gaussian_label(peak, self.opts.sigma, (gh, gw))?;
            if self.cls_samples.len() == self.opts.sample_capacity {
                self.cls_samples.remove(0);
            }
            self.cls_samples.push((cls_feat.clone(), label));
            self.filter = fit_filter(
                &self.cls_samples,
                self.opts.lambda,
                &FitOptions {
                    filter_size: self.opts.queue.template_size,
                    iterations: self.opts.filter_iterations,
                    step: 1.0,
                },
            )?;
        }

        let attention = if want_attention {
            let templates = self.queue.as_stacked()?;
            Some(attention_map(&features, &templates, &self.params.attn)?)
        } else {
            None
        };
        Ok(TrackStep { bbox, confidence, score_map, attention })
    }
}

fn geom_cell(bbox: &BBox, grid_h: usize, grid_w: usize) -> (usize, usize) {
    // The box here is already in grid cell coordinates; its center cell is
    // the nearest integer cell.
    let r = (bbox.cy - 0.5).round().clamp(0.0, grid_h as f64 - 1.0) as usize;
    let c = (bbox.cx - 0.5).round().clamp(0.0, grid_w as f64 - 1.0) as usize;
    (r, c)
}

/// Runs the tracker over a whole sequence. Frame 0 initializes from the
/// ground truth and reports the initialization box; later frames are
/// tracked online.
pub fn track_sequence(
    params: &ModelParams,
    sequence: &Sequence,
    opts: &TrackerOptions,
) -> Result<TrackResult> {
    if sequence.frames.is_empty() {
        return Err(TregError::Precondition("sequence has no frames".into()));
    }
    let mut tracker = Tracker::init(
        params.clone(),
        &sequence.frames[0],
        sequence.boxes[0],
        opts.clone(),
    )?;
    let mut pred = vec![sequence.boxes[0]];
    for (t, frame) in sequence.frames.iter().enumerate().skip(1) {
        let step = tracker.track_frame(frame, t as u64, false)?;
        pred.push(step.bbox);
    }
    TrackResult::new(sequence.name.clone(), pred, sequence.boxes.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ModelConfig, ModelParams};
    use crate::synth::{gen_sequence, SequenceSpec};

    fn spec(seed: u64) -> SequenceSpec {
        SequenceSpec {
            name: format!("trk{seed}"),
            length: 12,
            image_size: 64,
            start_center: (30.0, 34.0),
            velocity: (0.8, -0.4),
            base_size: (16.0, 14.0),
            scale_range: (1.0, 1.0),
            scale_cycles: 1.0,
            aspect_amplitude: 0.0,
            aspect_cycles: 1.0,
            jitter: 0.0,
            distractor_count: 1,
            distractor_similarity: 0.4,
            noise_level: 0.01,
            seed,
        }
    }

    #[test]
    fn one_frame_sequence_returns_init_box() {
        let mut s = gen_sequence(&spec(1)).unwrap();
        s.frames.truncate(1);
        s.boxes.truncate(1);
        let params = ModelParams::init(ModelConfig::default(), 1);
        let result = track_sequence(&params, &s, &TrackerOptions::default()).unwrap();
        assert_eq!(result.len(), 1);
        assert_eq!(result.pred[0], s.boxes[0]);
        assert_eq!(result.ious[0], 1.0);
    }

    #[test]
    fn tracking_is_deterministic() {
        let s = gen_sequence(&spec(2)).unwrap();
        let params = ModelParams::init(ModelConfig::default(), 2);
        let a = track_sequence(&params, &s, &TrackerOptions::default()).unwrap();
        let b = track_sequence(&params, &s, &TrackerOptions::default()).unwrap();
        assert_eq!(a.pred, b.pred);
    }

    #[test]
    fn all_fusion_kinds_run() {
        let s = gen_sequence(&spec(3)).unwrap();
        let params = ModelParams::init(ModelConfig::default(), 3);
        for fusion in [
            FusionKind::TargetAwareTransformer,
            FusionKind::DepthwiseCorrelation,
            FusionKind::PixelCorrAttention,
            FusionKind::NoFusion,
        ] {
            let opts = TrackerOptions { fusion, ..Default::default() };
            let r = track_sequence(&params, &s, &opts).unwrap();
            assert_eq!(r.len(), s.frames.len());
        }
    }

    #[test]
    fn queue_presets_run_and_respect_bounds() {
        let s = gen_sequence(&spec(4)).unwrap();
        let params = ModelParams::init(ModelConfig::default(), 4);
        for preset in ["static1", "static3", "static7", "fixed", "confidence"] {
            let mut queue = QueueConfig::preset(preset).unwrap();
            queue.update_interval = 4;
            let opts = TrackerOptions { queue, ..Default::default() };
            let mut tracker =
                Tracker::init(params.clone(), &s.frames[0], s.boxes[0], opts).unwrap();
            for t in 1..s.frames.len() {
                tracker.track_frame(&s.frames[t], t as u64, false).unwrap();
                assert!(tracker.queue().total_committed() <= 7, "{preset}");
            }
        }
    }

    #[test]
    fn attention_dump_matches_op() {
        let s = gen_sequence(&spec(5)).unwrap();
        let params = ModelParams::init(ModelConfig::default(), 5);
        let mut tracker = Tracker::init(
            params.clone(),
            &s.frames[0],
            s.boxes[0],
            TrackerOptions::default(),
        )
        .unwrap();
        let step = tracker.track_frame(&s.frames[1], 1, true).unwrap();
        let dumped = step.attention.unwrap();
        // Recompute with the op on the same state.
        let features = extract_features(&s.frames[1].to_map()).unwrap();
        let templates = tracker.queue().as_stacked().unwrap();
        let expected = attention_map(&features, &templates, &params.attn).unwrap();
        assert_eq!(dumped, expected);
    }

    #[test]
    fn tat_cls_wiring_runs() {
        let s = gen_sequence(&spec(6)).unwrap();
        let params = ModelParams::init(ModelConfig { tat_cls: true, ..Default::default() }, 6);
        let r = track_sequence(&params, &s, &TrackerOptions::default()).unwrap();
        assert_eq!(r.len(), s.frames.len());
    }
}
