use std::path::Path;

use treg_core::io::{
    discover_sequences, prepare_out_dir, read_sequence_dir, write_boxes, write_map_csv,
    write_pgm_scaled,
};
use treg_core::tracker::Tracker;
use treg_core::{ModelParams, Result, TregError};

use crate::config::{echo_config, DumpAttnCmdConfig};

/// Tracks each sequence and writes the per-frame attention map as a
/// min-max scaled PGM plus a `row,col,value` CSV, alongside the boxes.
pub fn run_dump_attn(config: DumpAttnCmdConfig, out: &Path, force: bool) -> Result<()> {
    let checkpoint = config.checkpoint.as_deref().ok_or_else(|| {
        TregError::MissingInput("checkpoint path (set --checkpoint or config key 'checkpoint')".into())
    })?;
    let dataset = config.dataset.as_deref().ok_or_else(|| {
        TregError::MissingInput("dataset path (set --dataset or config key 'dataset')".into())
    })?;
    let params = ModelParams::load(checkpoint)?;
    let seq_dirs = discover_sequences(dataset)?;
    prepare_out_dir(out, force)?;
    echo_config(out, &config)?;

    for dir in &seq_dirs {
        let seq = read_sequence_dir(dir)?;
        let seq_out = out.join(&seq.name);
        std::fs::create_dir_all(&seq_out)?;
        let mut opts = config.tracker.clone();
        opts.seed = config.seed;
        let mut tracker = Tracker::init(params.clone(), &seq.frames[0], seq.boxes[0], opts)?;
        let mut boxes = vec![seq.boxes[0]];
        let limit = if config.max_frames == 0 {
            seq.frames.len()
        } else {
            config.max_frames.min(seq.frames.len())
        };
        for t in 1..limit {
            let step = tracker.track_frame(&seq.frames[t], t as u64, true)?;
            let attn = step.attention.expect("attention requested");
            write_pgm_scaled(&seq_out.join(format!("attn_{t:04}.pgm")), &attn)?;
            write_map_csv(&seq_out.join(format!("attn_{t:04}.csv")), &attn)?;
            boxes.push(step.bbox);
        }
        write_boxes(&seq_out.join("boxes.txt"), &boxes)?;
    }
    println!("dumped attention maps for {} sequences", seq_dirs.len());
    Ok(())
}
