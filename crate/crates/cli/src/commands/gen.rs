use std::path::Path;

use treg_core::ablation::generate_suite;
use treg_core::io::{prepare_out_dir, write_sequence_dir};
use treg_core::Result;

use crate::config::{echo_config, GenConfig};

/// Renders the suite to `out/<sequence_name>/` directories.
pub fn run_gen(config: GenConfig, out: &Path, force: bool) -> Result<()> {
    let sequences = generate_suite(&config.suite)?;
    prepare_out_dir(out, force)?;
    echo_config(out, &config)?;
    for (_, seq) in &sequences {
        write_sequence_dir(&out.join(&seq.name), seq)?;
    }
    println!("generated {} sequences into {}", sequences.len(), out.display());
    Ok(())
}
