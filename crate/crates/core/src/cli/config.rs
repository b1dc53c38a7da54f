use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::anchors::AnchorSpec;
use crate::budget::{CostModel, Sampler};
use crate::dataio::SynthTaskSpec;
use crate::error::{Error, Result};
use crate::stitching::SpaceMode;
use crate::training::{LayerMode, TrainConfig};

/// One experiment, read from a flat TOML file. Every key has a default;
/// unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    pub small_depth: usize,
    pub small_width: usize,
    pub small_heads: usize,
    pub large_depth: usize,
    pub large_width: usize,
    pub large_heads: usize,
    pub mlp_ratio: f64,

    /// `synthetic` or `idx`.
    pub task: String,
    pub num_classes: usize,
    pub seq_len: usize,
    pub patch_dim: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub noise_std: f64,
    pub margin: f64,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub val_images: Option<PathBuf>,
    pub val_labels: Option<PathBuf>,
    pub patch_size: usize,

    /// `TWS` or `V1-FS`.
    pub mode: String,
    /// FLOPs step of the budget bins; when absent, the cost of swapping one
    /// small block for its large-anchor counterparts.
    pub budget_step: Option<f64>,
    pub count_crossing_flops: bool,
    /// Token count used for FLOPs; defaults to the data's sequence length.
    pub cost_seq_len: Option<usize>,

    pub pretrain_iterations: usize,
    pub pretrain_learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_scale_anchors: f64,
    pub warmup: usize,
    pub weight_decay: f64,
    /// `uniform` or `ros`.
    pub sampler: String,
    /// `lora`, `lora(r)`, `full` or `frozen`.
    pub stitch_layer_mode: String,
    pub lora_std: f64,
    pub calib_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            small_depth: 4,
            small_width: 32,
            small_heads: 4,
            large_depth: 8,
            large_width: 64,
            large_heads: 8,
            mlp_ratio: 4.0,
            task: "synthetic".into(),
            num_classes: 10,
            seq_len: 8,
            patch_dim: 16,
            train_per_class: 200,
            val_per_class: 100,
            noise_std: 1.0,
            margin: 3.0,
            train_images: None,
            train_labels: None,
            val_images: None,
            val_labels: None,
            patch_size: 4,
            mode: "TWS".into(),
            budget_step: None,
            count_crossing_flops: true,
            cost_seq_len: None,
            pretrain_iterations: 400,
            pretrain_learning_rate: 1e-3,
            iterations: 2000,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_scale_anchors: 1.0,
            warmup: 20,
            weight_decay: 0.05,
            sampler: "ros".into(),
            stitch_layer_mode: "lora(16)".into(),
            lora_std: 0.02,
            calib_samples: 256,
        }
    }
}

/// Where the data for an experiment comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskSource {
    Synthetic(SynthTaskSpec),
    Idx {
        train: (PathBuf, PathBuf),
        val: (PathBuf, PathBuf),
        patch: usize,
    },
}

/// A config file that failed to parse, with a 1-based position when known.
#[derive(Debug)]
pub struct ParseError {
    pub message: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ParseError> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = match e.span() {
                Some(span) => {
                    let (l, c) = line_col(text, span.start);
                    (Some(l), Some(c))
                }
                None => (None, None),
            };
            ParseError {
                message: e.message().to_string(),
                line,
                column,
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, ParseError> {
        let text = std::fs::read_to_string(path).map_err(|e| ParseError {
            message: format!("{}: {e}", path.display()),
            line: None,
            column: None,
        })?;
        Self::from_toml(&text)
    }

    pub fn small_spec(&self) -> AnchorSpec {
        AnchorSpec {
            depth: self.small_depth,
            width: self.small_width,
            heads: self.small_heads,
            mlp_ratio: self.mlp_ratio,
            patch_dim: self.patch_dim,
            num_classes: self.num_classes,
            seq_len: self.seq_len,
        }
    }

    pub fn large_spec(&self) -> AnchorSpec {
        AnchorSpec {
            depth: self.large_depth,
            width: self.large_width,
            heads: self.large_heads,
            ..self.small_spec()
        }
    }

    pub fn space_mode(&self) -> Result<SpaceMode> {
        self.mode.parse()
    }

    pub fn task_source(&self) -> Result<TaskSource> {
        match self.task.as_str() {
            "synthetic" => Ok(TaskSource::Synthetic(SynthTaskSpec {
                num_classes: self.num_classes,
                train_per_class: self.train_per_class,
                val_per_class: self.val_per_class,
                seq_len: self.seq_len,
                patch_dim: self.patch_dim,
                noise_std: self.noise_std,
                margin: self.margin,
                prototype_seed: crate::linalg::derive_seed(self.seed, "prototypes"),
            })),
            "idx" => {
                let need = |p: &Option<PathBuf>, key: &str| {
                    p.clone()
                        .ok_or_else(|| Error::Config(format!("task = \"idx\" requires {key}")))
                };
                Ok(TaskSource::Idx {
                    train: (need(&self.train_images, "train_images")?, need(&self.train_labels, "train_labels")?),
                    val: (need(&self.val_images, "val_images")?, need(&self.val_labels, "val_labels")?),
                    patch: self.patch_size,
                })
            }
            other => Err(Error::Config(format!("unknown task {other:?} (synthetic, idx)"))),
        }
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        let n = self.cost_seq_len.unwrap_or(self.seq_len);
        Ok(CostModel::with_seq_len(&self.small_spec(), &self.large_spec(), n)?
            .counting_crossings(self.count_crossing_flops))
    }

    /// The configured budget step, or one large-anchor stage's extra cost.
    pub fn budget_step(&self, cost: &CostModel) -> Result<f64> {
        match self.budget_step {
            Some(t) if t > 0.0 && t.is_finite() => Ok(t),
            Some(t) => Err(Error::Config(format!("budget_step must be positive, got {t}"))),
            None => {
                let ratio = (self.large_depth / self.small_depth.max(1)) as f64;
                Ok(ratio * cost.large.block - cost.small.block)
            }
        }
    }

    pub fn pretrain_config(&self, anchor: &str) -> TrainConfig {
        TrainConfig {
            iterations: self.pretrain_iterations,
            learning_rate: self.pretrain_learning_rate,
            seed: crate::linalg::derive_seed(self.seed, &format!("pretrain.{anchor}")),
            ..self.train_config_unchecked()
        }
    }

    fn train_config_unchecked(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            lr_scale_anchors: self.lr_scale_anchors,
            warmup: self.warmup,
            weight_decay: self.weight_decay,
            sampler: self.sampler.parse().unwrap_or(Sampler::Ros),
            layer_mode: self.stitch_layer_mode.parse().unwrap_or_default(),
            lora_std: self.lora_std,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            sampler: self.sampler.parse()?,
            layer_mode: self.stitch_layer_mode.parse::<LayerMode>()?,
            ..self.train_config_unchecked()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every derived setting before any compute starts.
    pub fn validate(&self) -> Result<()> {
        self.small_spec().validate()?;
        self.large_spec().validate()?;
        self.space_mode()?;
        if let TaskSource::Synthetic(t) = self.task_source()? {
            t.validate()?;
        }
        let cost = self.cost_model()?;
        self.budget_step(&cost)?;
        self.train_config()?;
        self.pretrain_config("small").validate()?;
        if self.calib_samples == 0 {
            return Err(Error::Config("calib_samples must be positive".into()));
        }
        if self.iterations == 0 || self.learning_rate <= 0.0 {
            return Err(Error::Config("iterations and learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// 1-based line and column of byte `offset` in `text`.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}
