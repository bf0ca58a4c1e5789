use std::path::Path;

use treg_core::ablation::{run_ablation, AblationConfig};
use treg_core::io::{prepare_out_dir, write_metrics_csv};
use treg_core::Result;

use crate::config::{echo_config, AblateCmdConfig};

/// Trains and evaluates the configured grid, writing the results table.
/// Sub-suite rows are labeled `config@SUITE`.
pub fn run_ablate(config: AblateCmdConfig, out: &Path, force: bool) -> Result<()> {
    prepare_out_dir(out, force)?;
    echo_config(out, &config)?;
    let ablation = AblationConfig {
        suite: config.suite.clone(),
        train: config.train.clone(),
        seeds: config.seeds.clone(),
        entries: config.entries.clone(),
    };
    let table = run_ablation(&ablation, config.model)?;
    write_metrics_csv(&out.join("results.csv"), &table.csv_rows())?;
    for row in &table.rows {
        if row.sub_suite.is_none() {
            println!("{:<16} auc {:.4} precision {:.4}", row.config, row.auc, row.precision);
        }
    }
    Ok(())
}
