use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::anchors::{load_checkpoint, save_checkpoint, AnchorModel};
use crate::budget::{build_distribution, write_distribution, BudgetDistribution, Sampler};
use crate::cli::{CliError, ExperimentConfig, TaskSource};
use crate::dataio::{load_idx, make_synthetic, Dataset, Split};
use crate::error::{Error, Result};
use crate::evalbench::{anchor_accuracy, emit_curve, sweep};
use crate::linalg::Rng;
use crate::stitching::{load_space, save_space, StitchSpace};
use crate::training::{init_stitching_layers, pretrain_anchor, train_snnet};

pub const SMALL_CKPT: &str = "small.snv2";
pub const LARGE_CKPT: &str = "large.snv2";
pub const PRETRAIN_LOSS: &str = "pretrain_loss.csv";
pub const JOINT_SMALL: &str = "joint_small.snv2";
pub const JOINT_LARGE: &str = "joint_large.snv2";
pub const SPACE_JSON: &str = "space.json";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const DISTRIBUTION_STEM: &str = "distribution";
pub const SAMPLE_DEMO: &str = "sample_demo.csv";

/// A validated config plus runtime options.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub workers: usize,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, workers: usize) -> Result<Self> {
        fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
        Ok(Context { cfg, workers })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn require(&self, name: &str, hint: &'static str) -> Result<PathBuf, CliError> {
        let p = self.out(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::Missing { path: p, hint })
        }
    }

    fn distribution(&self, space: &StitchSpace) -> Result<BudgetDistribution> {
        let cost = self.cfg.cost_model()?;
        build_distribution(space, &cost, self.cfg.budget_step(&cost)?)
    }
}

/// Train and validation splits described by the config.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match cfg.task_source()? {
        TaskSource::Synthetic(spec) => make_synthetic(&spec, &mut Rng::derive(cfg.seed, "data")),
        TaskSource::Idx { train, val, patch } => {
            let classes = Some(cfg.num_classes);
            Ok((
                load_idx(&train.0, &train.1, patch, classes, Split::Train)?,
                load_idx(&val.0, &val.1, patch, classes, Split::Val)?,
            ))
        }
    }
}

fn space_of(cfg: &ExperimentConfig) -> Result<StitchSpace> {
    StitchSpace::enumerate(&cfg.small_spec(), &cfg.large_spec(), cfg.space_mode()?)
}

pub fn cmd_pretrain(ctx: &Context) -> Result<String, CliError> {
    let cfg = &ctx.cfg;
    let (train, val) = load_data(cfg)?;
    let mut init = Rng::derive(cfg.seed, "init");
    let mut small = AnchorModel::new(cfg.small_spec(), &mut init)?;
    let mut large = AnchorModel::new(cfg.large_spec(), &mut init)?;
    let ls = pretrain_anchor(&mut small, &train, &cfg.pretrain_config("small"))?;
    let ll = pretrain_anchor(&mut large, &train, &cfg.pretrain_config("large"))?;
    save_checkpoint(&small, &ctx.out(SMALL_CKPT))?;
    save_checkpoint(&large, &ctx.out(LARGE_CKPT))?;

    let path = ctx.out(PRETRAIN_LOSS);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    w.write_record(["iter", "small_loss", "large_loss"])
        .map_err(|e| Error::csv(&path, e))?;
    for (i, (a, b)) in ls.iter().zip(&ll).enumerate() {
        w.write_record([i.to_string(), a.to_string(), b.to_string()])
            .map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let (a, b) = (anchor_accuracy(&small, &val)?, anchor_accuracy(&large, &val)?);
    Ok(format!("pretrained: small accuracy {a:.4}, large accuracy {b:.4}"))
}

pub fn cmd_enumerate(ctx: &Context) -> Result<String, CliError> {
    let space = space_of(&ctx.cfg)?;
    let cost = ctx.cfg.cost_model()?;
    let path = ctx.out("configs.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    w.write_record(["config_id", "kind", "label", "crossings", "flops"])
        .map_err(|e| Error::csv(&path, e))?;
    for (id, c) in space.configs().iter().enumerate() {
        let crossings: Vec<String> = c.crossings.iter().map(ToString::to_string).collect();
        w.write_record([
            id.to_string(),
            c.kind.as_str().to_string(),
            c.label(),
            crossings.join(" "),
            format!("{}", cost.flops_of(c)),
        ])
        .map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(format!("configs: {}", space.len()))
}

pub fn cmd_distribution(ctx: &Context) -> Result<String, CliError> {
    let space = space_of(&ctx.cfg)?;
    let dist = ctx.distribution(&space)?;
    write_distribution(&dist, &ctx.cfg.out_dir, DISTRIBUTION_STEM)?;
    Ok(format!("bins: {} configs: {}", dist.num_bins(), dist.total()))
}

pub fn cmd_train(ctx: &Context) -> Result<String, CliError> {
    const HINT: &str = "run `snstitch pretrain` first";
    let cfg = &ctx.cfg;
    let mut small = load_checkpoint(&ctx.require(SMALL_CKPT, HINT)?)?;
    let mut large = load_checkpoint(&ctx.require(LARGE_CKPT, HINT)?)?;
    if small.spec != cfg.small_spec() || large.spec != cfg.large_spec() {
        return Err(Error::Config("checkpoints do not match the anchor settings in the config".into()).into());
    }
    let (train, _) = load_data(cfg)?;
    let tcfg = cfg.train_config()?;
    let mut space = space_of(cfg)?;
    init_stitching_layers(
        &mut space,
        &small,
        &large,
        &train,
        cfg.calib_samples,
        &tcfg,
        &mut Rng::derive(cfg.seed, "lora"),
    )?;
    let dist = ctx.distribution(&space)?;
    let log_path = ctx.out(TRAIN_LOG);
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let recs = train_snnet(&mut space, &mut small, &mut large, &dist, &train, &tcfg, Some(&mut log))?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    save_checkpoint(&small, &ctx.out(JOINT_SMALL))?;
    save_checkpoint(&large, &ctx.out(JOINT_LARGE))?;
    save_space(&space, &ctx.out(SPACE_JSON))?;
    let tail = &recs[recs.len().saturating_sub(100)..];
    let mean = tail.iter().map(|r| r.loss).sum::<f64>() / tail.len().max(1) as f64;
    Ok(format!(
        "trained: {} iterations over {} configs, mean loss of last {} iterations {mean:.4}",
        recs.len(),
        space.len(),
        tail.len()
    ))
}

pub fn cmd_sweep(ctx: &Context) -> Result<String, CliError> {
    const HINT: &str = "run `snstitch train` first";
    let cfg = &ctx.cfg;
    let small = load_checkpoint(&ctx.require(JOINT_SMALL, HINT)?)?;
    let large = load_checkpoint(&ctx.require(JOINT_LARGE, HINT)?)?;
    let space = load_space(&ctx.require(SPACE_JSON, HINT)?)?;
    let (_, val) = load_data(cfg)?;
    let result = sweep(&space, &small, &large, &val, &cfg.cost_model()?, ctx.workers)?;
    emit_curve(&result, &ctx.out(SWEEP_CSV))?;
    let on_front = result.pareto.iter().filter(|&&p| p).count();
    let best = result.rows.iter().map(|r| r.accuracy).fold(0.0, f64::max);
    Ok(format!(
        "sweep: {} configs, {on_front} on the frontier, best accuracy {best:.4}",
        result.rows.len()
    ))
}

pub fn cmd_sample_demo(ctx: &Context, draws: usize) -> Result<String, CliError> {
    let cfg = &ctx.cfg;
    let sampler: Sampler = cfg.sampler.parse()?;
    let space = space_of(cfg)?;
    let dist = ctx.distribution(&space)?;
    let mut rng = Rng::derive(cfg.seed, "sampler");
    let mut counts = vec![0usize; space.len()];
    for _ in 0..draws {
        counts[dist.sample(sampler, &mut rng).config_id] += 1;
    }
    let anchors = space.anchor_ids();
    let hits: usize = anchors.iter().map(|&a| counts[a]).sum();
    let analytic = anchors
        .iter()
        .map(|&a| dist.config_probability(sampler, a))
        .sum::<Result<num_rational::Ratio<u64>>>()?;
    write_counts(&ctx.out(SAMPLE_DEMO), &counts)?;
    let freq = if draws == 0 { 0.0 } else { hits as f64 / draws as f64 };
    Ok(format!(
        "anchor frequency: {freq:.4} over {draws} draws (analytic {}/{}, {} bins, {} configs)",
        analytic.numer(),
        analytic.denom(),
        dist.num_bins(),
        dist.total()
    ))
}

fn write_counts(path: &Path, counts: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["config_id", "count"]).map_err(|e| Error::csv(path, e))?;
    for (id, c) in counts.iter().enumerate() {
        w.write_record([id.to_string(), c.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
