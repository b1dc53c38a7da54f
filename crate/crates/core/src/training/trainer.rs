use std::io::Write;

use serde::Serialize;

use crate::anchors::AnchorModel;
use crate::budget::BudgetDistribution;
use crate::dataio::{Batcher, Dataset};
use crate::error::{Error, Result};
use crate::linalg::Rng;
use crate::stitching::StitchSpace;
use crate::training::{cross_entropy, AdamW, LayerMode, TrainConfig};

/// One joint-training iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    /// FLOPs level of the sampled bin.
    pub tau0: f64,
    pub config_id: usize,
    pub loss: f64,
}

fn check_data(model: &AnchorModel, data: &Dataset) -> Result<()> {
    let s = &model.spec;
    if (s.seq_len, s.patch_dim) != (data.seq_len(), data.patch_dim()) || s.num_classes < data.num_classes() {
        return Err(Error::shape(
            "training data",
            format!(
                "samples are {}×{} with {} classes, model expects {}×{} with {}",
                data.seq_len(),
                data.patch_dim(),
                data.num_classes(),
                s.seq_len,
                s.patch_dim,
                s.num_classes
            ),
        ));
    }
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    Ok(())
}

/// Trains one anchor on its own; returns the per-iteration training loss.
pub fn pretrain_anchor(model: &mut AnchorModel, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_data(model, data)?;
    let mut batches = Batcher::new(data.len(), Rng::derive(cfg.seed, "batches"));
    let mut opt = AdamW::with_weight_decay(cfg.weight_decay);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let (x, labels) = data.batch(&batches.next_indices(cfg.batch_size))?;
        let (logits, cache) = model.forward(&x)?;
        let (loss, dlogits) = cross_entropy(&logits, &labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                config_id: None,
                last_good: it.checked_sub(1),
            });
        }
        let grads = model.backward(&cache, &dlogits)?;
        opt.step_anchor("", model, &grads, cfg.lr_at(it))?;
        losses.push(loss);
        if it % 100 == 0 {
            log::debug!("pretrain iter {it} loss {loss:.4}");
        }
    }
    Ok(losses)
}

/// Least-squares initialization of every stitching layer on
/// `calib_samples` training samples, then LoRA factors if the mode asks for
/// them. `B` draws come from `rng`.
pub fn init_stitching_layers(
    space: &mut StitchSpace,
    small: &AnchorModel,
    large: &AnchorModel,
    data: &Dataset,
    calib_samples: usize,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<()> {
    check_data(small, data)?;
    let n = calib_samples.min(data.len());
    let (x, _) = data.batch(&(0..n).collect::<Vec<_>>())?;
    space.ls_initialize(small, large, &x)?;
    if let LayerMode::Lora { rank } = cfg.layer_mode {
        space.attach_lora(rank, cfg.lora_std, rng)?;
    }
    Ok(())
}

/// Joint training of all stitches: each iteration samples a FLOPs bin and a
/// stitch in it, runs that one route, and updates only the parameters on
/// the route. Records are appended to `log` as JSON lines when given.
pub fn train_snnet(
    space: &mut StitchSpace,
    small: &mut AnchorModel,
    large: &mut AnchorModel,
    dist: &BudgetDistribution,
    data: &Dataset,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<IterRecord>> {
    cfg.validate()?;
    check_data(small, data)?;
    if dist.total() != space.len() {
        return Err(Error::Config(format!(
            "distribution covers {} configs, space has {}",
            dist.total(),
            space.len()
        )));
    }
    let mut sampler = Rng::derive(cfg.seed, "sampler");
    let mut batches = Batcher::new(data.len(), Rng::derive(cfg.seed, "batches"));
    let mut opt = AdamW::with_weight_decay(cfg.weight_decay);
    let mut records = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let draw = dist.sample(cfg.sampler, &mut sampler);
        let (x, labels) = data.batch(&batches.next_indices(cfg.batch_size))?;
        let (logits, cache) = space.forward_stitched(draw.config_id, small, large, &x)?;
        let (loss, dlogits) = cross_entropy(&logits, &labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                config_id: Some(draw.config_id),
                last_good: it.checked_sub(1),
            });
        }
        let grads = space.backward_stitched(small, large, &cache, &dlogits)?;
        let lr = cfg.lr_at(it);
        let lr_anchor = lr * cfg.lr_scale_anchors;
        opt.step_anchor("small.", small, &grads.small, lr_anchor)?;
        opt.step_anchor("large.", large, &grads.large, lr_anchor)?;
        for (id, g) in &grads.layers {
            let layer = space.layer_mut(id)?;
            match cfg.layer_mode {
                LayerMode::Lora { .. } => {
                    if let (Some(p), Some(g)) = (layer.lora.as_mut(), g.lora.as_ref()) {
                        opt.step(&format!("{id}.B"), &mut p.b, &g.b, lr)?;
                        opt.step(&format!("{id}.A"), &mut p.a, &g.a, lr)?;
                    } else {
                        return Err(Error::State(format!(
                            "layer {id} has no LoRA factors in LoRA mode"
                        )));
                    }
                }
                LayerMode::Full => opt.step(&format!("{id}.M"), &mut layer.m, &g.m, lr)?,
                LayerMode::Frozen => {}
            }
        }
        let rec = IterRecord {
            iter: it,
            tau0: dist.tau0(draw.bin),
            config_id: draw.config_id,
            loss,
        };
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&rec).expect("log record serializes");
            writeln!(w, "{line}").map_err(|e| Error::io("<training log>", e))?;
        }
        if it % 100 == 0 {
            log::debug!("joint iter {it} config {} loss {loss:.4}", draw.config_id);
        }
        records.push(rec);
    }
    Ok(records)
}
