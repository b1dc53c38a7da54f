use serde::{Deserialize, Serialize};

use crate::budget::Sampler;
use crate::error::{Error, Result};
use crate::stitching::{DEFAULT_LORA_RANK, DEFAULT_LORA_STD};

/// How stitching layers are trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerMode {
    /// `M` frozen at its least-squares value; the low-rank `B·A` trains.
    Lora { rank: usize },
    /// `M` itself trains.
    Full,
    /// Nothing in the stitching layers trains.
    Frozen,
}

impl Default for LayerMode {
    fn default() -> Self {
        LayerMode::Lora {
            rank: DEFAULT_LORA_RANK,
        }
    }
}

impl std::str::FromStr for LayerMode {
    type Err = Error;

    /// `lora`, `lora(8)`, `full` or `frozen`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "full" => return Ok(LayerMode::Full),
            "frozen" => return Ok(LayerMode::Frozen),
            "lora" => return Ok(LayerMode::default()),
            _ => {}
        }
        t.strip_prefix("lora(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|r| r.trim().parse().ok())
            .map(|rank| LayerMode::Lora { rank })
            .ok_or_else(|| Error::Config(format!("unknown stitch layer mode {s:?} (lora, lora(r), full, frozen)")))
    }
}

impl std::fmt::Display for LayerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerMode::Lora { rank } => write!(f, "lora({rank})"),
            LayerMode::Full => f.write_str("full"),
            LayerMode::Frozen => f.write_str("frozen"),
        }
    }
}

/// Optimization settings shared by anchor pretraining and joint training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier on `learning_rate` for anchor parameters during joint training.
    pub lr_scale_anchors: f64,
    /// Linear warmup length in iterations, followed by cosine decay to zero.
    pub warmup: usize,
    pub weight_decay: f64,
    pub sampler: Sampler,
    pub layer_mode: LayerMode,
    pub lora_std: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1000,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_scale_anchors: 1.0,
            warmup: 0,
            weight_decay: 0.05,
            sampler: Sampler::Ros,
            layer_mode: LayerMode::default(),
            lora_std: DEFAULT_LORA_STD,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("lr_scale_anchors", self.lr_scale_anchors),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if let LayerMode::Lora { rank } = self.layer_mode {
            if rank == 0 {
                return bad("LoRA rank must be at least 1".into());
            }
            if !(self.lora_std > 0.0 && self.lora_std.is_finite()) {
                return bad(format!("lora_std must be positive, got {}", self.lora_std));
            }
        }
        Ok(())
    }

    /// Learning rate at iteration `it`.
    pub fn lr_at(&self, it: usize) -> f64 {
        let base = self.learning_rate;
        if it < self.warmup {
            return base * (it + 1) as f64 / self.warmup as f64;
        }
        let span = self.iterations.saturating_sub(self.warmup).max(1) as f64;
        let progress = ((it - self.warmup) as f64 / span).min(1.0);
        base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
