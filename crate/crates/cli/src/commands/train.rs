use std::path::Path;

use treg_core::ablation::generate_suite;
use treg_core::io::{discover_sequences, prepare_out_dir, read_sequence_dir, write_loss_log};
use treg_core::trainer::{train, TrainDataset};
use treg_core::{ModelParams, Result};

use crate::config::{echo_config, TrainCmdConfig};

/// Trains on a generated dataset directory or an in-memory suite, writing
/// the checkpoint and the loss log.
pub fn run_train(config: TrainCmdConfig, out: &Path, force: bool) -> Result<()> {
    let sequences = match &config.dataset {
        Some(dir) => discover_sequences(dir)?
            .iter()
            .map(|d| read_sequence_dir(d))
            .collect::<Result<Vec<_>>>()?,
        None => generate_suite(&config.suite)?
            .into_iter()
            .map(|(_, s)| s)
            .collect(),
    };
    let dataset = TrainDataset::from_sequences(&sequences)?;
    prepare_out_dir(out, force)?;
    echo_config(out, &config)?;
    let init = ModelParams::init(config.model, config.seed);
    let (params, log) = train(&config.train, &dataset, init)?;
    params.save(out.join("checkpoint.tregckpt"))?;
    write_loss_log(&out.join("loss_log.csv"), &log)?;
    let last = log.last();
    println!(
        "trained {} iterations (final total loss {})",
        log.len(),
        last.map(|r| format!("{:.6}", r.total)).unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}
