// Probe: single-batch overfit behavior at several learning rates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treg_core::params::{ModelConfig, ModelParams};
use treg_core::synth::{gen_sequence, SequenceSpec};
use treg_core::trainer::{sample_pair, train_step, Adam, TrainConfig, TrainDataset, TrainPair};

fn dataset() -> TrainDataset {
    let seqs: Vec<_> = (0..3)
        .map(|i| {
            gen_sequence(&SequenceSpec {
                name: format!("s{i}"),
                length: 10,
                image_size: 128,
                start_center: (60.0 + i as f64 * 2.0, 64.0),
                velocity: (0.5, -0.3),
                base_size: (24.0 + 3.0 * i as f64, 20.0),
                scale_range: (0.85, 1.2),
                scale_cycles: 1.0,
                aspect_amplitude: 0.15,
                aspect_cycles: 1.0,
                jitter: 0.5,
                distractor_count: 2,
                distractor_similarity: 0.5,
                noise_level: 0.02,
                seed: 100 + i,
            })
            .unwrap()
        })
        .collect();
    TrainDataset::from_sequences(&seqs).unwrap()
}

#[test]
#[ignore]
fn probe_overfit() {
    let ds = dataset();
    for lr in [1e-2, 3e-3, 1e-3] {
        let cfg = TrainConfig { learning_rate: lr, ..Default::default() };
        let mut params = ModelParams::init(ModelConfig::default(), 1);
        let mut opt = Adam::new(&params, lr);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch: Vec<TrainPair> =
            (0..8).map(|_| sample_pair(&ds, &mut rng, 10).unwrap()).collect();
        let mut first = None;
        let mut last = None;
        for step in 0..500 {
            let l = train_step(&mut params, &ds, &batch, &cfg, &mut opt).unwrap();
            if step == 0 {
                first = Some(l.total);
            }
            last = Some(l.total);
            if step % 100 == 0 {
                eprintln!(
                    "lr {lr:.0e} step {step}: total {:.5} cls {:.5} reg {:.5}",
                    l.total, l.cls, l.reg
                );
            }
        }
        let (f, l) = (first.unwrap(), last.unwrap());
        eprintln!("lr {lr:.0e}: first {f:.5} last {l:.5} drop {:.1}%", 100.0 * (1.0 - l / f));
    }
}
