use std::path::Path;

use treg_core::ablation::thread_pool;
use treg_core::io::{
    discover_sequences, prepare_out_dir, read_sequence_dir, write_boxes, write_metrics_csv,
};
use treg_core::metrics::TrackResult;
use treg_core::tracker::track_sequence;
use treg_core::{ModelParams, Result};

use crate::config::{echo_config, TrackCmdConfig};

/// Runs the tracker over every sequence in the dataset, writing one box
/// file per sequence and a metrics table.
pub fn run_track(config: TrackCmdConfig, out: &Path, force: bool) -> Result<()> {
    let params = ModelParams::load(config.checkpoint_path()?)?;
    let seq_dirs = discover_sequences(config.dataset_path()?)?;
    prepare_out_dir(out, force)?;
    echo_config(out, &config)?;

    let results: Vec<TrackResult> = thread_pool().install(|| {
        use rayon::prelude::*;
        seq_dirs
            .par_iter()
            .map(|dir| {
                let seq = read_sequence_dir(dir)?;
                track_sequence(&params, &seq, &config.tracker)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows = Vec::with_capacity(results.len() + 1);
    for r in &results {
        write_boxes(&out.join(format!("boxes_{}.txt", r.name)), &r.pred)?;
        rows.push((r.name.clone(), r.success_auc(), r.precision_at(20.0)));
    }
    let overall_auc = results.iter().map(|r| r.success_auc()).sum::<f64>() / results.len() as f64;
    let overall_prec =
        results.iter().map(|r| r.precision_at(20.0)).sum::<f64>() / results.len() as f64;
    rows.push(("overall".into(), overall_auc, overall_prec));
    write_metrics_csv(&out.join("metrics.csv"), &rows)?;
    println!(
        "tracked {} sequences: mean AUC {overall_auc:.4}, precision {overall_prec:.4}",
        results.len()
    );
    Ok(())
}
