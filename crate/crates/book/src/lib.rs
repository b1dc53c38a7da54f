//! The guide in `book/`, one module per chapter, so that `cargo test`
//! compiles and runs every listing in it.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/stitch-space.md")]
pub mod stitch_space {}
#[doc = include_str!("../../../book/src/stitching-layers.md")]
pub mod stitching_layers {}
#[doc = include_str!("../../../book/src/budgets.md")]
pub mod budgets {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
