use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of one plain-transformer anchor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    /// Number of transformer blocks.
    pub depth: usize,
    /// Embedding width.
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    /// Features per input token.
    pub patch_dim: usize,
    pub num_classes: usize,
    /// Tokens per sample.
    pub seq_len: usize,
}

impl AnchorSpec {
    /// The small toy anchor: 4 blocks, width 32, 4 heads.
    pub fn toy_small(patch_dim: usize, num_classes: usize, seq_len: usize) -> Self {
        AnchorSpec {
            depth: 4,
            width: 32,
            heads: 4,
            mlp_ratio: 4.0,
            patch_dim,
            num_classes,
            seq_len,
        }
    }

    /// The large toy anchor: 8 blocks, width 64, 8 heads.
    pub fn toy_large(patch_dim: usize, num_classes: usize, seq_len: usize) -> Self {
        AnchorSpec {
            depth: 8,
            width: 64,
            heads: 8,
            mlp_ratio: 4.0,
            patch_dim,
            num_classes,
            seq_len,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.width as f64 * self.mlp_ratio).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("anchor spec: {msg}")));
        if self.depth < 2 {
            return fail(format!("depth must be >= 2, got {}", self.depth));
        }
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return fail(format!(
                "width {} must be a positive multiple of heads {}",
                self.width, self.heads
            ));
        }
        if self.mlp_ratio.is_nan() || self.mlp_ratio <= 0.0 || self.mlp_hidden() == 0 {
            return fail(format!("mlp_ratio must be positive, got {}", self.mlp_ratio));
        }
        if self.seq_len == 0 {
            return fail("seq_len must be >= 1".into());
        }
        if self.patch_dim == 0 || self.num_classes == 0 {
            return fail("patch_dim and num_classes must be positive".into());
        }
        Ok(())
    }
}
