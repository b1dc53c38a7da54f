#![allow(dead_code)]

use std::collections::BTreeSet;

use snstitch::anchors::{AnchorModel, AnchorSpec};
use snstitch::linalg::{gaussian, Matrix, Rng};
use snstitch::stitching::{AnchorId, SpaceMode, StitchConfig};

/// Relative error with an absolute floor, so entries whose true gradient is
/// ~0 are judged by the central-difference noise level instead.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central difference of `loss` w.r.t. one entry reachable through `poke`.
pub fn central_difference<M: Clone>(
    base: &M,
    eps: f64,
    poke: impl Fn(&mut M, f64),
    loss: impl Fn(&M) -> f64,
) -> f64 {
    let mut plus = base.clone();
    poke(&mut plus, eps);
    let mut minus = base.clone();
    poke(&mut minus, -eps);
    (loss(&plus) - loss(&minus)) / (2.0 * eps)
}

pub fn tiny_spec() -> AnchorSpec {
    AnchorSpec {
        depth: 2,
        width: 8,
        heads: 2,
        mlp_ratio: 4.0,
        patch_dim: 5,
        num_classes: 3,
        seq_len: 3,
    }
}

/// A model whose every tensor is redrawn at a scale where all the
/// nonlinearities are exercised (the default 0.02 init is nearly linear).
pub fn roughened(spec: AnchorSpec, seed: u64) -> AnchorModel {
    let mut rng = Rng::seed_from(seed);
    let mut model = AnchorModel::new(spec, &mut rng).unwrap();
    for (name, t) in model.named_tensors_mut() {
        let noise = gaussian(&mut rng, t.rows(), t.cols(), 0.35).unwrap();
        if name.ends_with(".scale") {
            t.fill(1.0);
        } else {
            t.fill(0.0);
        }
        t.add_assign(&noise).unwrap();
    }
    model
}

pub fn random_input(spec: &AnchorSpec, batch: usize, seed: u64) -> Matrix {
    gaussian(
        &mut Rng::seed_from(seed),
        batch * spec.seq_len,
        spec.patch_dim,
        1.0,
    )
    .unwrap()
}

/// ImageNet-scale shapes of the small/large anchor pair: 224² images in
/// 16×16 patches (196 tokens of 768 values), 1000 classes.
pub fn deit3_small() -> AnchorSpec {
    AnchorSpec {
        depth: 12,
        width: 384,
        heads: 6,
        mlp_ratio: 4.0,
        patch_dim: 768,
        num_classes: 1000,
        seq_len: 196,
    }
}

pub fn deit3_large() -> AnchorSpec {
    AnchorSpec {
        depth: 24,
        width: 1024,
        heads: 16,
        ..deit3_small()
    }
}

/// Budget step that separates the DeiT3-S/L stitches into one bin per
/// number of large-anchor stages.
pub const DEIT3_STEP: f64 = 4.8e9;

/// Upper 0.001 quantile of the chi-square distribution with 9 degrees of
/// freedom.
pub const CHI2_9DF_P001: f64 = 27.877;

/// Brute-force oracle: a route is an assignment of an anchor to each of the
/// `L_small` stages (stage k = small block k = large blocks [k·r, (k+1)·r)).
/// Two-way routes switch anchors at most twice; the one-way space only
/// allows a single small-to-large switch.
pub fn brute_force_masks(depth: usize, mode: SpaceMode) -> BTreeSet<u32> {
    (0u32..1 << depth)
        .filter(|&mask| {
            let bit = |i: usize| (mask >> i) & 1;
            let switches = (0..depth - 1).filter(|&i| bit(i) != bit(i + 1)).count();
            match mode {
                SpaceMode::Tws => switches <= 2,
                SpaceMode::V1Fs => switches == 0 || (switches == 1 && bit(0) == 0),
            }
        })
        .collect()
}

/// Stage mask of a config: bit k set when stage k runs on the large anchor.
pub fn mask_of(c: &StitchConfig, small_depth: usize, ratio: usize) -> u32 {
    let mut mask = 0;
    for k in 0..small_depth {
        let seg = c
            .segments
            .iter()
            .find(|s| match s.anchor {
                AnchorId::Small => s.from <= k && k < s.to,
                AnchorId::Large => s.from <= k * ratio && (k + 1) * ratio <= s.to,
            })
            .unwrap_or_else(|| panic!("{} leaves stage {k} uncovered", c.label()));
        if seg.anchor == AnchorId::Large {
            mask |= 1 << k;
        }
    }
    mask
}
