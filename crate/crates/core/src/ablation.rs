//! Ablation runner: trains one model per fusion kind and seed on the same
//! synthetic suite, tracks every sequence under each configuration, and
//! tabulates seed-averaged success AUC and precision, overall and per
//! sub-suite.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fusion::FusionKind;
use crate::metrics::{mean_precision, mean_success_auc, TrackResult};
use crate::params::{ModelConfig, ModelParams};
use crate::queue::QueueConfig;
use crate::synth::{gen_sequence, Sequence, SubSuite, SuiteSpec};
use crate::tracker::{track_sequence, TrackerOptions};
use crate::trainer::{train, TrainConfig, TrainDataset};

/// Global pool sized by the `TREG_THREADS` environment variable.
pub fn thread_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Ok(v) = std::env::var("TREG_THREADS") {
            if let Ok(n) = v.parse::<usize>() {
                if n >= 1 {
                    builder = builder.num_threads(n);
                }
            }
        }
        builder.build().expect("thread pool")
    })
}

/// One tracked configuration: a label, the fusion kind, and the queue.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationEntry {
    pub label: String,
    pub fusion: FusionKind,
    pub queue: QueueConfig,
    /// Wire the attention block into the classifier path (Table-style
    /// classification ablation).
    #[serde(default)]
    pub tat_cls: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub suite: SuiteSpec,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub entries: Vec<AblationEntry>,
}

/// Seed-averaged metrics for one configuration, overall or restricted to
/// one sub-suite.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub config: String,
    pub sub_suite: Option<SubSuite>,
    pub auc: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, config: &str, sub_suite: Option<SubSuite>) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.config == config && r.sub_suite == sub_suite)
    }

    /// Rows flattened for the `config,auc,precision` CSV; sub-suite rows
    /// are labeled `config@SUITE`.
    pub fn csv_rows(&self) -> Vec<(String, f64, f64)> {
        self.rows
            .iter()
            .map(|r| {
                let name = match r.sub_suite {
                    Some(s) => format!("{}@{}", r.config, s.name()),
                    None => r.config.clone(),
                };
                (name, r.auc, r.precision)
            })
            .collect()
    }
}

/// Renders every sequence of a suite, in parallel, merged in suite order.
pub fn generate_suite(spec: &SuiteSpec) -> Result<Vec<(SubSuite, Sequence)>> {
    let expanded = spec.expand()?;
    thread_pool().install(|| {
        expanded
            .par_iter()
            .map(|(sub, seq_spec)| gen_sequence(seq_spec).map(|s| (*sub, s)))
            .collect()
    })
}

/// Tracks every sequence under one option set, in parallel, merged in
/// sequence order.
pub fn track_suite(
    params: &ModelParams,
    sequences: &[(SubSuite, Sequence)],
    opts: &TrackerOptions,
) -> Result<Vec<(SubSuite, TrackResult)>> {
    thread_pool().install(|| {
        sequences
            .par_iter()
            .map(|(sub, seq)| track_sequence(params, seq, opts).map(|r| (*sub, r)))
            .collect()
    })
}

fn summarize(results: &[(SubSuite, TrackResult)], precision_px: f64) -> (f64, f64) {
    let flat: Vec<TrackResult> = results.iter().map(|(_, r)| r.clone()).collect();
    (mean_success_auc(&flat), mean_precision(&flat, precision_px))
}

/// Runs the whole grid. Every configuration sees identical sequences and
/// identical training seeds; entries that share a fusion kind and
/// classifier wiring share the trained model within a seed.
pub fn run_ablation(config: &AblationConfig, model: ModelConfig) -> Result<AblationTable> {
    let precision_px = 20.0;
    // (entry index) -> per-seed (overall, per-suite) metrics.
    let mut per_entry: Vec<Vec<(f64, f64)>> = vec![Vec::new(); config.entries.len()];
    let mut per_entry_suite: Vec<BTreeMap<&'static str, Vec<(f64, f64)>>> =
        vec![BTreeMap::new(); config.entries.len()];
    let mut suite_names: Vec<SubSuite> = Vec::new();

    for &seed in &config.seeds {
        let suite = SuiteSpec { seed, ..config.suite.clone() };
        let sequences = generate_suite(&suite)?;
        if suite_names.is_empty() {
            for (sub, _) in &sequences {
                if !suite_names.contains(sub) {
                    suite_names.push(*sub);
                }
            }
        }
        let dataset = TrainDataset::from_sequences(
            &sequences.iter().map(|(_, s)| s.clone()).collect::<Vec<_>>(),
        )?;

        // Train once per distinct (fusion, tat_cls) pair.
        let mut trained: BTreeMap<(String, bool), ModelParams> = BTreeMap::new();
        for entry in &config.entries {
            let key = (entry.fusion.name().to_string(), entry.tat_cls);
            if trained.contains_key(&key) {
                continue;
            }
            let train_cfg = TrainConfig { fusion: entry.fusion, seed, ..config.train.clone() };
            let model_cfg = ModelConfig { tat_cls: entry.tat_cls, ..model };
            let init = ModelParams::init(model_cfg, seed);
            let (params, _) = train(&train_cfg, &dataset, init)?;
            trained.insert(key, params);
        }

        for (i, entry) in config.entries.iter().enumerate() {
            let key = (entry.fusion.name().to_string(), entry.tat_cls);
            let params = &trained[&key];
            let opts = TrackerOptions {
                fusion: entry.fusion,
                queue: entry.queue,
                seed,
                ..Default::default()
            };
            let results = track_suite(params, &sequences, &opts)?;
            per_entry[i].push(summarize(&results, precision_px));
            for sub in SubSuite::all() {
                let subset: Vec<(SubSuite, TrackResult)> = results
                    .iter()
                    .filter(|(s, _)| *s == sub)
                    .cloned()
                    .collect();
                if subset.is_empty() {
                    continue;
                }
                per_entry_suite[i]
                    .entry(sub.name())
                    .or_default()
                    .push(summarize(&subset, precision_px));
            }
        }
    }

    let mean = |v: &[(f64, f64)]| {
        let n = v.len() as f64;
        (
            v.iter().map(|x| x.0).sum::<f64>() / n,
            v.iter().map(|x| x.1).sum::<f64>() / n,
        )
    };
    let mut rows = Vec::new();
    for (i, entry) in config.entries.iter().enumerate() {
        let (auc, precision) = mean(&per_entry[i]);
        rows.push(AblationRow { config: entry.label.clone(), sub_suite: None, auc, precision });
        for sub in SubSuite::all() {
            if let Some(v) = per_entry_suite[i].get(sub.name()) {
                let (auc, precision) = mean(v);
                rows.push(AblationRow {
                    config: entry.label.clone(),
                    sub_suite: Some(sub),
                    auc,
                    precision,
                });
            }
        }
    }
    Ok(AblationTable { rows })
}
