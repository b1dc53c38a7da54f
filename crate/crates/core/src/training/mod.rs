//! Solo-anchor pretraining and joint stitched training.

mod config;
pub mod loss;
mod optimizer;
mod trainer;

pub use config::{LayerMode, TrainConfig};
pub use loss::{argmax_rows, cross_entropy};
pub use optimizer::{decays, AdamW, AdamWConfig};
pub use trainer::{init_stitching_layers, pretrain_anchor, train_snnet, IterRecord};
