//! Target-transformed regression tracking, desk scale.
//!
//! Dense tensor kernels with hand-derived backward passes, a target-aware
//! cross-attention block over an online template queue, anchor-free box
//! regression with IoU loss, a lightweight online classifier, synthetic
//! tracking benchmarks, and a toy end-to-end trainer.

pub mod ablation;
pub mod attention;
pub mod bbox;
pub mod checkpoint;
pub mod classifier;
pub mod error;
pub mod features;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod params;
pub mod queue;
pub mod regression;
pub mod synth;
pub mod tensor;
pub mod tracker;
pub mod trainer;

pub use attention::{
    affinity, attention_map, transform, transform_backward, AttentionGrads, AttentionParams,
    StackedTemplates,
};
pub use bbox::BBox;
pub use checkpoint::{Checkpoint, TensorRecord};
pub use classifier::{fit_filter, gaussian_label, locate, score, OnlineFilter, ScoreMap};
pub use error::{Result, TregError};
pub use fusion::{depthwise_correlation, pixel_corr_attention, FusionKind};
pub use metrics::{precision_at, success_auc, TrackResult};
pub use params::{ModelConfig, ModelParams};
pub use queue::{QueueConfig, TemplateEntry, TemplateQueueState, UpdateStrategy};
pub use regression::{
    decode_box, infer_box, iou, iou_loss, predict_offsets, training_targets, GridGeometry,
    InferMode, IouLossKind, OffsetMap, RegressionHead,
};
pub use synth::{gen_sequence, Frame, Sequence, SequenceSpec, SubSuite, SuiteSpec};
pub use tensor::{
    finite_diff_grad, roi_pool, roi_pool_backward, FeatureMap, GradTape, PointwiseLinear,
};
pub use tracker::{track_sequence, Tracker, TrackerOptions};
pub use trainer::{sample_pair, train, train_step, Adam, TrainConfig, TrainDataset, TrainPair};
