//! Routes through two anchors, the two-way stitching space, and stitching
//! layers (least-squares initialization plus low-rank adaptation).

mod io;
mod layer;
mod route;
mod space;

pub use io::{load_space, save_space, ConfigEntry, LayerEntry, SpaceDocument};
pub use layer::{
    ls_init, LoraFactors, StitchLayer, StitchLayerGrads, DEFAULT_LORA_RANK, DEFAULT_LORA_STD,
};
pub use route::{
    depth_ratio, enumerate_configs, space_size, AnchorId, CrossingId, Direction, Segment,
    SpaceMode, StitchConfig, StitchKind,
};
pub use space::{enumerate_space, StitchGrads, StitchSpace, StitchedCache};
