//! Command-line experiments: every command reads one config file and writes
//! its artifacts into the output directory.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_distribution, cmd_enumerate, cmd_pretrain, cmd_sample_demo, cmd_sweep, cmd_train,
    load_data, Context, DISTRIBUTION_STEM, JOINT_LARGE, JOINT_SMALL, LARGE_CKPT, PRETRAIN_LOSS,
    SAMPLE_DEMO, SMALL_CKPT, SPACE_JSON, SWEEP_CSV, TRAIN_LOG,
};
pub use config::{ExperimentConfig, ParseError, TaskSource};

use crate::error::Error;

/// Environment variable that overrides the config seed.
pub const SEED_ENV: &str = "SNSTITCH_SEED";

#[derive(Debug, Parser)]
#[command(name = "snstitch", version, about = "Two-way stitching of transformer anchors")]
pub struct Cli {
    /// Experiment config (flat TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Evaluation threads for `sweep`.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train both anchors on their own and save them.
    Pretrain,
    /// Enumerate the stitching space and list every config.
    Enumerate,
    /// Bin configs by FLOPs and write the budget distribution.
    Distribution,
    /// Jointly train all stitches from the pretrained anchors.
    Train,
    /// Evaluate every stitch and mark the accuracy/FLOPs frontier.
    Sweep,
    /// Draw stitches with the configured sampler and report anchor frequency.
    SampleDemo {
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
    },
}

/// A failed command, classified for the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// A prerequisite artifact is absent (exit 2).
    Missing { path: PathBuf, hint: &'static str },
    /// The config file could not be parsed or validated (exit 3).
    Config(ParseError),
    /// Any failure during the command itself.
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(message) => CliError::Config(ParseError {
                message,
                line: None,
                column: None,
            }),
            other => CliError::Run(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Missing { .. } => 2,
            CliError::Config(_) => 3,
            CliError::Run(Error::NonFiniteLoss { .. } | Error::Numerical(_)) => 4,
            CliError::Run(_) => 1,
        }
    }

    /// One-line JSON description for stderr.
    pub fn to_json(&self) -> String {
        let v = match self {
            CliError::Missing { path, hint } => serde_json::json!({
                "error": "missing_artifact",
                "code": self.exit_code(),
                "path": path.display().to_string(),
                "message": format!("{} not found; {hint}", path.display()),
            }),
            CliError::Config(p) => serde_json::json!({
                "error": "config",
                "code": self.exit_code(),
                "line": p.line,
                "column": p.column,
                "message": p.message,
            }),
            CliError::Run(e) => {
                let mut v = serde_json::json!({
                    "error": if self.exit_code() == 4 { "numerical" } else { "runtime" },
                    "code": self.exit_code(),
                    "message": e.to_string(),
                });
                if let Error::NonFiniteLoss { iteration, config_id, .. } = e {
                    v["iteration"] = (*iteration).into();
                    v["config_id"] = serde_json::to_value(config_id).expect("option serializes");
                }
                v
            }
        };
        v.to_string()
    }
}

/// Resolves config, seed override and output directory, then runs the
/// command. Returns the one-line summary.
pub fn run(cli: &Cli, seed_override: Option<&str>) -> Result<String, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(CliError::Config)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed_override {
        cfg.seed = s.trim().parse().map_err(|_| {
            CliError::Config(ParseError {
                message: format!("{SEED_ENV}={s:?} is not an unsigned integer"),
                line: None,
                column: None,
            })
        })?;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    let ctx = Context::new(cfg, cli.workers)?;
    match cli.command {
        Command::Pretrain => cmd_pretrain(&ctx),
        Command::Enumerate => cmd_enumerate(&ctx),
        Command::Distribution => cmd_distribution(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::Sweep => cmd_sweep(&ctx),
        Command::SampleDemo { draws } => cmd_sample_demo(&ctx, draws),
    }
}
