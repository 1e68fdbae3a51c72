pub mod ablate;
pub mod dataset_gen;
pub mod eval;
pub mod render;
pub mod train;
