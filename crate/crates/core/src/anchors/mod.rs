//! Toy-scale plain-transformer anchors: forward pass, block-range
//! execution for stitching, manual reverse-mode gradients and checkpoints.

mod checkpoint;
mod layers;
mod model;
mod spec;

pub use checkpoint::{from_records, load_checkpoint, save_checkpoint, to_records};
pub use layers::{LayerNorm, Linear};
pub use model::{
    AnchorGrads, AnchorModel, BlockCache, ForwardCache, HeadCache, TransformerBlock, BLOCK_TENSORS,
};
pub use spec::AnchorSpec;
