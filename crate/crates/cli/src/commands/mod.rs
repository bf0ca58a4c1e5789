mod ablate;
mod dump_attn;
mod eval;
mod gen;
mod track;
mod train;

pub use ablate::run_ablate;
pub use dump_attn::run_dump_attn;
pub use eval::run_eval;
pub use gen::run_gen;
pub use track::run_track;
pub use train::run_train;
