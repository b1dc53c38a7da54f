//! Datasets: synthetic token-cloud tasks and IDX image files.

mod dataset;
pub mod idx;
mod synth;

pub use dataset::{Batcher, Dataset, Split};
pub use idx::{load_idx, patchify, unpatchify, write_idx, IdxImages};
pub use synth::{make_synthetic, SynthTaskSpec};
