pub mod anchors;
pub mod budget;
pub mod cli;
pub mod container;
pub mod dataio;
pub mod error;
pub mod evalbench;
pub mod figure;
pub mod linalg;
pub mod stitching;
pub mod training;

pub use error::{Error, Result};
