use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSpec;
use crate::error::{Error, Result};
use crate::stitching::{AnchorId, StitchConfig, StitchSpace};

/// FLOPs of one pre-norm transformer block on `n` tokens of width `d`, with
/// multiply-accumulates counted as one FLOP:
/// qkv `3nd²`, projection `nd²`, MLP `2·ratio·nd²`, attention `2n²d`.
/// With `ratio = 4` this is `12nd² + 2n²d`.
pub fn block_flops(n: usize, d: usize, mlp_ratio: f64) -> f64 {
    let (n, d) = (n as f64, d as f64);
    (4.0 + 2.0 * mlp_ratio) * n * d * d + 2.0 * n * n * d
}

/// FLOPs of `depth` stacked blocks, excluding embedding and head.
pub fn backbone_flops(n: usize, d: usize, depth: usize, mlp_ratio: f64) -> f64 {
    depth as f64 * block_flops(n, d, mlp_ratio)
}

/// Per-anchor costs, in FLOPs per sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorCost {
    pub width: usize,
    pub block: f64,
    pub embed: f64,
    pub head: f64,
}

impl AnchorCost {
    pub fn of(spec: &AnchorSpec, seq_len: usize) -> Self {
        let n = seq_len as f64;
        let d = spec.width as f64;
        AnchorCost {
            width: spec.width,
            block: block_flops(seq_len, spec.width, spec.mlp_ratio),
            embed: n * spec.patch_dim as f64 * d,
            head: d * spec.num_classes as f64,
        }
    }
}

/// Cost model used to place every stitch on the FLOPs axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub seq_len: usize,
    pub small: AnchorCost,
    pub large: AnchorCost,
    /// Whether stitching-layer projections add `2·N·D_in·D_out` per crossing.
    pub count_crossing_flops: bool,
}

impl CostModel {
    /// Costs for the anchors' own sequence length.
    pub fn new(small: &AnchorSpec, large: &AnchorSpec) -> Result<Self> {
        if small.seq_len != large.seq_len {
            return Err(Error::Unsupported(format!(
                "anchors disagree on sequence length ({} vs {})",
                small.seq_len, large.seq_len
            )));
        }
        Self::with_seq_len(small, large, small.seq_len)
    }

    /// Costs evaluated at an arbitrary token count, e.g. to compare against
    /// published backbone figures.
    pub fn with_seq_len(small: &AnchorSpec, large: &AnchorSpec, seq_len: usize) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::Config("cost model needs seq_len > 0".into()));
        }
        small.validate()?;
        large.validate()?;
        Ok(CostModel {
            seq_len,
            small: AnchorCost::of(small, seq_len),
            large: AnchorCost::of(large, seq_len),
            count_crossing_flops: true,
        })
    }

    pub fn counting_crossings(mut self, on: bool) -> Self {
        self.count_crossing_flops = on;
        self
    }

    pub fn anchor(&self, id: AnchorId) -> &AnchorCost {
        match id {
            AnchorId::Small => &self.small,
            AnchorId::Large => &self.large,
        }
    }

    /// FLOPs of one stitching-layer projection; zero when not counted.
    pub fn crossing_flops(&self) -> f64 {
        if self.count_crossing_flops {
            2.0 * self.seq_len as f64 * self.small.width as f64 * self.large.width as f64
        } else {
            0.0
        }
    }

    /// Total FLOPs of one stitched network.
    pub fn flops_of(&self, config: &StitchConfig) -> f64 {
        let blocks: f64 = config
            .segments
            .iter()
            .map(|s| s.len() as f64 * self.anchor(s.anchor).block)
            .sum();
        blocks
            + self.anchor(config.entry_anchor()).embed
            + self.anchor(config.head_anchor()).head
            + config.crossings.len() as f64 * self.crossing_flops()
    }

    /// FLOPs of every config in `space`, indexed by config id.
    pub fn space_flops(&self, space: &StitchSpace) -> Vec<f64> {
        space.configs().iter().map(|c| self.flops_of(c)).collect()
    }
}
