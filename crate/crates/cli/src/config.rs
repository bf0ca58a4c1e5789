//! Per-command run configurations: JSON files merged with flag overrides,
//! echoed verbatim into the output directory.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use treg_core::ablation::AblationEntry;
use treg_core::queue::QueueConfig;
use treg_core::{
    FusionKind, ModelConfig, Result, SuiteSpec, TrackerOptions, TrainConfig, TregError,
};

/// Loads a JSON config, or the default when no path is given. Unknown keys
/// are rejected by the target types.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|_| TregError::MissingInput(format!("config file {}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| TregError::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// Writes the fully resolved config into the output directory, so any two
/// runs with identical echoes are identical runs.
pub fn echo_config<T: Serialize>(out_dir: &Path, config: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(config)
        .map_err(|e| TregError::Config(format!("config echo: {e}")))?;
    treg_core::io::write_string(&out_dir.join("config.json"), &format!("{text}\n"))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub seed: u64,
    pub suite: SuiteSpec,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { seed: 0, suite: SuiteSpec::default() }
    }
}

impl GenConfig {
    pub fn resolve(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.suite.seed = self.seed;
        self
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCmdConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Train on this generated dataset directory; otherwise render the
    /// suite below in memory.
    pub dataset: Option<PathBuf>,
    pub suite: SuiteSpec,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        TrainCmdConfig {
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            dataset: None,
            suite: SuiteSpec { sequences_per_suite: 6, ..Default::default() },
        }
    }
}

impl TrainCmdConfig {
    pub fn resolve(mut self, seed: Option<u64>, fusion: Option<FusionKind>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.train.seed = self.seed;
        self.suite.seed = self.seed;
        if let Some(f) = fusion {
            self.train.fusion = f;
        }
        self
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackCmdConfig {
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub tracker: TrackerOptions,
}

impl Default for TrackCmdConfig {
    fn default() -> Self {
        TrackCmdConfig {
            seed: 0,
            checkpoint: None,
            dataset: None,
            tracker: TrackerOptions::default(),
        }
    }
}

impl TrackCmdConfig {
    pub fn resolve(
        mut self,
        seed: Option<u64>,
        fusion: Option<FusionKind>,
        queue: Option<&str>,
        checkpoint: Option<PathBuf>,
        dataset: Option<PathBuf>,
    ) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.tracker.seed = self.seed;
        if let Some(f) = fusion {
            self.tracker.fusion = f;
        }
        if let Some(q) = queue {
            self.tracker.queue = QueueConfig::preset(q)?;
        }
        if checkpoint.is_some() {
            self.checkpoint = checkpoint;
        }
        if dataset.is_some() {
            self.dataset = dataset;
        }
        Ok(self)
    }

    pub fn checkpoint_path(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| TregError::MissingInput("checkpoint path (set --checkpoint or config key 'checkpoint')".into()))
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| TregError::MissingInput("dataset path (set --dataset or config key 'dataset')".into()))
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalCmdConfig {
    pub dataset: Option<PathBuf>,
    /// Directory of `boxes_<sequence>.txt` files written by `track`.
    pub boxes: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateCmdConfig {
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub suite: SuiteSpec,
    pub entries: Vec<AblationEntry>,
}

/// The default grid: the fusion comparison rows plus the queue ablation
/// rows, all sharing one training budget.
pub fn default_entries() -> Vec<AblationEntry> {
    let static3 = QueueConfig::preset("static3").expect("preset");
    let mut entries = vec![
        AblationEntry {
            label: "none".into(),
            fusion: FusionKind::NoFusion,
            queue: static3,
            tat_cls: false,
        },
        AblationEntry {
            label: "dwcorr".into(),
            fusion: FusionKind::DepthwiseCorrelation,
            queue: static3,
            tat_cls: false,
        },
        AblationEntry {
            label: "pcorr".into(),
            fusion: FusionKind::PixelCorrAttention,
            queue: static3,
            tat_cls: false,
        },
        AblationEntry {
            label: "tat".into(),
            fusion: FusionKind::TargetAwareTransformer,
            queue: static3,
            tat_cls: false,
        },
        AblationEntry {
            label: "tat-cls".into(),
            fusion: FusionKind::TargetAwareTransformer,
            queue: static3,
            tat_cls: true,
        },
    ];
    for preset in ["static1", "static7", "fixed", "confidence"] {
        let mut queue = QueueConfig::preset(preset).expect("preset");
        // Short synthetic sequences need a short commit interval.
        queue.update_interval = 10;
        entries.push(AblationEntry {
            label: format!("tat+{preset}"),
            fusion: FusionKind::TargetAwareTransformer,
            queue,
            tat_cls: false,
        });
    }
    entries
}

impl Default for AblateCmdConfig {
    fn default() -> Self {
        AblateCmdConfig {
            seed: 0,
            seeds: vec![0, 1, 2],
            model: ModelConfig::default(),
            train: TrainConfig { iterations: 700, ..Default::default() },
            suite: SuiteSpec::default(),
            entries: default_entries(),
        }
    }
}

impl AblateCmdConfig {
    pub fn resolve(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
            self.seeds = vec![s, s + 1, s + 2];
        }
        self
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DumpAttnCmdConfig {
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub tracker: TrackerOptions,
    /// Cap on dumped frames per sequence (0 = all).
    pub max_frames: usize,
}

impl Default for DumpAttnCmdConfig {
    fn default() -> Self {
        DumpAttnCmdConfig {
            seed: 0,
            checkpoint: None,
            dataset: None,
            tracker: TrackerOptions::default(),
            max_frames: 0,
        }
    }
}
