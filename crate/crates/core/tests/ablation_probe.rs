// Probe: fusion ordering on a medium suite, one seed.

use treg_core::ablation::{run_ablation, AblationConfig, AblationEntry};
use treg_core::fusion::FusionKind;
use treg_core::params::ModelConfig;
use treg_core::queue::QueueConfig;
use treg_core::synth::{SubSuite, SuiteSpec};
use treg_core::trainer::TrainConfig;

#[test]
#[ignore]
fn probe_fusion_ordering() {
    let static3 = QueueConfig::preset("static3").unwrap();
    let config = AblationConfig {
        suite: SuiteSpec {
            sequences_per_suite: 10,
            length: 40,
            image_size: 128,
            distractor_count: 2,
            distractor_similarity: 0.5,
            noise_level: 0.02,
            seed: 0,
            sub_suites: SubSuite::all().to_vec(),
        },
        train: TrainConfig { iterations: 600, batch_size: 8, learning_rate: 1e-2, ..Default::default() },
        seeds: vec![0],
        entries: vec![
            AblationEntry { label: "tat".into(), fusion: FusionKind::TargetAwareTransformer, queue: static3, tat_cls: false },
            AblationEntry { label: "dwcorr".into(), fusion: FusionKind::DepthwiseCorrelation, queue: static3, tat_cls: false },
            AblationEntry { label: "none".into(), fusion: FusionKind::NoFusion, queue: static3, tat_cls: false },
        ],
    };
    let t0 = std::time::Instant::now();
    let table = run_ablation(&config, ModelConfig::default()).unwrap();
    eprintln!("elapsed: {:.1}s", t0.elapsed().as_secs_f64());
    for row in &table.rows {
        eprintln!(
            "{:<10} {:<8} auc {:.4} precision {:.4}",
            row.config,
            row.sub_suite.map(|s| s.name()).unwrap_or("ALL"),
            row.auc,
            row.precision
        );
    }
}
