use std::path::Path;

use treg_core::io::{
    discover_sequences, prepare_out_dir, read_boxes, read_groundtruth, write_metrics_csv,
};
use treg_core::metrics::TrackResult;
use treg_core::{Result, TregError};

use crate::config::{echo_config, EvalCmdConfig};

/// Recomputes metrics from box files written by `track` against a
/// dataset's ground truth.
pub fn run_eval(config: EvalCmdConfig, out: &Path, force: bool) -> Result<()> {
    let dataset = config
        .dataset
        .as_deref()
        .ok_or_else(|| TregError::MissingInput("dataset path (config key 'dataset')".into()))?;
    let boxes_dir = config
        .boxes
        .as_deref()
        .ok_or_else(|| TregError::MissingInput("boxes path (config key 'boxes')".into()))?;
    let seq_dirs = discover_sequences(dataset)?;
    let mut results = Vec::with_capacity(seq_dirs.len());
    for dir in &seq_dirs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let gt = read_groundtruth(&dir.join("groundtruth.txt"))?;
        let box_file = boxes_dir.join(format!("boxes_{name}.txt"));
        if !box_file.is_file() {
            return Err(TregError::MissingInput(format!("box file {}", box_file.display())));
        }
        let pred = read_boxes(&box_file)?;
        if pred.len() != gt.len() {
            return Err(TregError::Parse(format!(
                "{name}: {} predictions but {} ground-truth boxes",
                pred.len(),
                gt.len()
            )));
        }
        results.push(TrackResult::new(name, pred, gt)?);
    }
    prepare_out_dir(out, force)?;
    echo_config(out, &config)?;
    let mut rows: Vec<(String, f64, f64)> = results
        .iter()
        .map(|r| (r.name.clone(), r.success_auc(), r.precision_at(20.0)))
        .collect();
    let mean_auc = results.iter().map(|r| r.success_auc()).sum::<f64>() / results.len() as f64;
    let mean_prec =
        results.iter().map(|r| r.precision_at(20.0)).sum::<f64>() / results.len() as f64;
    rows.push(("overall".into(), mean_auc, mean_prec));
    write_metrics_csv(&out.join("metrics.csv"), &rows)?;
    println!("evaluated {} sequences: mean AUC {mean_auc:.4}", results.len());
    Ok(())
}
