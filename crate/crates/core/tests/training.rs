use std::collections::BTreeMap;

use snstitch::anchors::{AnchorModel, AnchorSpec};
use snstitch::budget::{build_distribution, BudgetDistribution, CostModel, Sampler};
use snstitch::dataio::{make_synthetic, Dataset, SynthTaskSpec};
use snstitch::evalbench::{anchor_accuracy, config_accuracy};
use snstitch::linalg::{Matrix, Rng};
use snstitch::stitching::{AnchorId, CrossingId, SpaceMode, StitchLayer, StitchSpace};
use snstitch::training::{
    init_stitching_layers, pretrain_anchor, train_snnet, AdamW, IterRecord, LayerMode, TrainConfig,
};
use snstitch::Error;

#[test]
fn adamw_matches_hand_trajectory() {
    // Reference values from an independent scalar implementation of the
    // decoupled-decay update (lr 0.1, wd 0.05, grads 0.5, −1, 2).
    let expected = [
        ("p.weight", [0.895000002, 0.9271353542305654, 0.8805341159369517]),
        ("p.bias", [0.900000002, 0.9366103542405654, 0.8946447927181046]),
    ];
    for (name, want) in expected {
        let mut opt = AdamW::with_weight_decay(0.05);
        let mut p = Matrix::filled(1, 1, 1.0);
        for (g, w) in [0.5, -1.0, 2.0].into_iter().zip(want) {
            opt.step(name, &mut p, &Matrix::filled(1, 1, g), 0.1).unwrap();
            assert!((p.get(0, 0) - w).abs() < 1e-14, "{name}: {} vs {w}", p.get(0, 0));
        }
        assert_eq!(opt.steps(name), 3);
    }
}

#[test]
fn zero_gradient_without_decay_is_a_no_op() {
    let mut opt = AdamW::with_weight_decay(0.0);
    let start = Matrix::from_rows(&[[1.5, -2.0], [0.0, 3.25]]).unwrap();
    let mut p = start.clone();
    for _ in 0..10 {
        opt.step("w.weight", &mut p, &Matrix::zeros(2, 2), 0.01).unwrap();
    }
    assert!(p.bit_eq(&start));
}

#[test]
fn optimizer_rejects_mismatched_shapes() {
    let mut opt = AdamW::with_weight_decay(0.0);
    let mut p = Matrix::zeros(2, 2);
    assert!(matches!(
        opt.step("w", &mut p, &Matrix::zeros(2, 3), 0.1),
        Err(Error::Shape { .. })
    ));
    assert!(!opt.has_state("w"));
    opt.step("w", &mut p, &Matrix::zeros(2, 2), 0.1).unwrap();
    let mut q = Matrix::zeros(3, 3);
    assert!(opt.step("w", &mut q, &Matrix::zeros(3, 3), 0.1).is_err());
}

fn task(seq_len: usize, patch_dim: usize, classes: usize, per_class: usize) -> (Dataset, Dataset) {
    let spec = SynthTaskSpec {
        num_classes: classes,
        train_per_class: per_class,
        val_per_class: per_class / 2,
        seq_len,
        patch_dim,
        noise_std: 1.0,
        margin: 3.0,
        prototype_seed: 4,
    };
    make_synthetic(&spec, &mut Rng::seed_from(8)).unwrap()
}

fn small_cfg(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_size: 8,
        learning_rate: 2e-3,
        warmup: 5,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn pretraining_lowers_loss_and_repeats_exactly() {
    let (train, _) = task(4, 8, 4, 40);
    let spec = AnchorSpec {
        depth: 2,
        width: 16,
        heads: 2,
        mlp_ratio: 4.0,
        patch_dim: 8,
        num_classes: 4,
        seq_len: 4,
    };
    let run = || {
        let mut m = AnchorModel::new(spec.clone(), &mut Rng::seed_from(1)).unwrap();
        let losses = pretrain_anchor(&mut m, &train, &small_cfg(120)).unwrap();
        (m, losses)
    };
    let (m1, l1) = run();
    let (m2, l2) = run();
    assert_eq!(l1.len(), 120);
    assert_eq!(l1, l2);
    for ((_, a), (_, b)) in m1.named_tensors().into_iter().zip(m2.named_tensors()) {
        assert!(a.bit_eq(b));
    }
    let head: f64 = l1[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = l1[110..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let (train, _) = task(4, 8, 4, 10);
    let spec = AnchorSpec {
        depth: 2,
        width: 8,
        heads: 2,
        mlp_ratio: 4.0,
        patch_dim: 8,
        num_classes: 4,
        seq_len: 4,
    };
    let mut m = AnchorModel::new(spec, &mut Rng::seed_from(2)).unwrap();
    let before = m.clone();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..small_cfg(20)
    };
    pretrain_anchor(&mut m, &train, &cfg).unwrap();
    for ((_, a), (_, b)) in m.named_tensors().into_iter().zip(before.named_tensors()) {
        assert!(a.bit_eq(b));
    }
}

#[test]
fn non_finite_loss_aborts_pretraining() {
    let (train, _) = task(4, 8, 4, 10);
    let spec = AnchorSpec {
        depth: 2,
        width: 8,
        heads: 2,
        mlp_ratio: 4.0,
        patch_dim: 8,
        num_classes: 4,
        seq_len: 4,
    };
    let mut m = AnchorModel::new(spec, &mut Rng::seed_from(2)).unwrap();
    m.head.bias.set(0, 1, f64::NAN);
    match pretrain_anchor(&mut m, &train, &small_cfg(5)) {
        Err(Error::NonFiniteLoss {
            iteration: 0,
            config_id: None,
            last_good: None,
        }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn mismatched_data_rejected() {
    let (train, _) = task(4, 8, 4, 10);
    let spec = AnchorSpec::toy_small(16, 10, 8);
    let mut m = AnchorModel::new(spec, &mut Rng::seed_from(2)).unwrap();
    assert!(matches!(
        pretrain_anchor(&mut m, &train, &small_cfg(1)),
        Err(Error::Shape { .. })
    ));
}

struct Joint {
    space: StitchSpace,
    small: AnchorModel,
    large: AnchorModel,
    dist: BudgetDistribution,
    train: Dataset,
    val: Dataset,
}

fn joint(mode: LayerMode, seed: u64) -> Joint {
    let (train, val) = task(4, 8, 4, 30);
    let small_spec = AnchorSpec {
        depth: 4,
        width: 8,
        heads: 2,
        mlp_ratio: 2.0,
        patch_dim: 8,
        num_classes: 4,
        seq_len: 4,
    };
    let large_spec = AnchorSpec {
        depth: 8,
        width: 12,
        heads: 2,
        ..small_spec.clone()
    };
    let mut rng = Rng::seed_from(seed);
    let small = AnchorModel::new(small_spec.clone(), &mut rng).unwrap();
    let large = AnchorModel::new(large_spec.clone(), &mut rng).unwrap();
    let mut space = StitchSpace::enumerate(&small_spec, &large_spec, SpaceMode::Tws).unwrap();
    let cfg = TrainConfig {
        layer_mode: mode,
        ..small_cfg(1)
    };
    init_stitching_layers(&mut space, &small, &large, &train, 40, &cfg, &mut rng).unwrap();
    let cost = CostModel::new(&small_spec, &large_spec).unwrap();
    let dist = build_distribution(&space, &cost, 2.0 * cost.large.block - cost.small.block).unwrap();
    Joint {
        space,
        small,
        large,
        dist,
        train,
        val,
    }
}

fn run(j: &mut Joint, cfg: &TrainConfig) -> Vec<IterRecord> {
    train_snnet(&mut j.space, &mut j.small, &mut j.large, &j.dist, &j.train, cfg, None).unwrap()
}

fn tensors(m: &AnchorModel) -> BTreeMap<String, Matrix> {
    m.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect()
}

fn layers(s: &StitchSpace) -> BTreeMap<CrossingId, StitchLayer> {
    s.layers().clone()
}

#[test]
fn lora_training_never_moves_m() {
    let mut j = joint(LayerMode::Lora { rank: 2 }, 1);
    let before = layers(&j.space);
    let records = run(&mut j, &small_cfg(100));
    assert_eq!(records.len(), 100);
    let mut lora_moved = false;
    for (id, layer) in j.space.layers() {
        assert!(layer.m.bit_eq(&before[id].m), "{id}");
        lora_moved |= !layer.lora.as_ref().unwrap().a.bit_eq(&before[id].lora.as_ref().unwrap().a);
    }
    assert!(lora_moved);
}

#[test]
fn zero_iterations_change_nothing() {
    let mut j = joint(LayerMode::Lora { rank: 2 }, 2);
    let (s, l, ly) = (tensors(&j.small), tensors(&j.large), layers(&j.space));
    let cfg = TrainConfig {
        iterations: 0,
        ..small_cfg(0)
    };
    assert!(run(&mut j, &cfg).is_empty());
    assert_eq!(tensors(&j.small), s);
    assert_eq!(tensors(&j.large), l);
    assert_eq!(layers(&j.space), ly);
}

#[test]
fn one_iteration_only_updates_the_sampled_route() {
    for seed in 0..24 {
        let mut j = joint(LayerMode::Lora { rank: 2 }, 10);
        let (s, l, ly) = (tensors(&j.small), tensors(&j.large), layers(&j.space));
        let cfg = TrainConfig {
            seed,
            warmup: 0,
            ..small_cfg(1)
        };
        let rec = run(&mut j, &cfg)[0];
        let config = j.space.config(rec.config_id).unwrap().clone();
        let on_route = |anchor: AnchorId, block: usize| {
            config
                .segments
                .iter()
                .any(|g| g.anchor == anchor && g.from <= block && block < g.to)
        };
        for (anchor, model, before) in [(AnchorId::Small, &j.small, &s), (AnchorId::Large, &j.large, &l)] {
            for (name, t) in model.named_tensors() {
                let expected_update = if let Some(rest) = name.strip_prefix("blocks.") {
                    let block: usize = rest.split('.').next().unwrap().parse().unwrap();
                    on_route(anchor, block)
                } else if name.starts_with("patch_embed") {
                    config.entry_anchor() == anchor
                } else {
                    config.head_anchor() == anchor
                };
                let changed = !t.bit_eq(&before[&name]);
                if !expected_update {
                    assert!(!changed, "{} {anchor:?} {name} moved", config.label());
                }
                // Weight matrices on the route always move under AdamW.
                if expected_update && name.ends_with(".weight") {
                    assert!(changed, "{} {anchor:?} {name} did not move", config.label());
                }
            }
        }
        for (id, layer) in j.space.layers() {
            let crossed = config.crossings.contains(id);
            let moved = layer != &ly[id];
            assert_eq!(moved, crossed, "{} layer {id}", config.label());
        }
    }
}

#[test]
fn anchor_scale_zero_freezes_anchors() {
    let mut j = joint(LayerMode::Full, 3);
    let (s, l, ly) = (tensors(&j.small), tensors(&j.large), layers(&j.space));
    let cfg = TrainConfig {
        lr_scale_anchors: 0.0,
        sampler: Sampler::Uniform,
        layer_mode: LayerMode::Full,
        ..small_cfg(40)
    };
    let recs = run(&mut j, &cfg);
    assert!(recs.iter().any(|r| !j.space.config(r.config_id).unwrap().kind.is_anchor()));
    assert_eq!(tensors(&j.small), s);
    assert_eq!(tensors(&j.large), l);
    assert_ne!(layers(&j.space), ly);
}

#[test]
fn frozen_mode_keeps_layers_fixed() {
    let mut j = joint(LayerMode::Frozen, 4);
    let ly = layers(&j.space);
    let s = tensors(&j.small);
    run(&mut j, &TrainConfig { layer_mode: LayerMode::Frozen, ..small_cfg(40) });
    assert_eq!(layers(&j.space), ly);
    assert_ne!(tensors(&j.small), s);
}

#[test]
fn lora_mode_without_factors_is_a_state_error() {
    let mut j = joint(LayerMode::Full, 5);
    let cfg = TrainConfig {
        sampler: Sampler::Uniform,
        ..small_cfg(50)
    };
    let r = train_snnet(&mut j.space, &mut j.small, &mut j.large, &j.dist, &j.train, &cfg, None);
    assert!(matches!(r, Err(Error::State(_))));
}

#[test]
fn training_log_is_json_lines() {
    let mut j = joint(LayerMode::Lora { rank: 2 }, 6);
    let mut buf = Vec::new();
    let recs = train_snnet(&mut j.space, &mut j.small, &mut j.large, &j.dist, &j.train, &small_cfg(15), Some(&mut buf))
        .unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 15);
    for (line, rec) in lines.iter().zip(&recs) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let obj = v.as_object().unwrap();
        assert_eq!(obj.len(), 4);
        assert_eq!(v["iter"], rec.iter);
        assert_eq!(v["config_id"], rec.config_id);
        assert_eq!(v["loss"].as_f64().unwrap(), rec.loss);
        let bin = j.dist.bin_of(rec.config_id).unwrap();
        assert_eq!(v["tau0"].as_f64().unwrap(), j.dist.tau0(bin));
    }
}

#[test]
fn joint_training_is_deterministic() {
    let go = || {
        let mut j = joint(LayerMode::Lora { rank: 2 }, 7);
        let recs = run(&mut j, &small_cfg(30));
        (recs, tensors(&j.small), layers(&j.space))
    };
    assert_eq!(go(), go());
}

#[test]
fn non_finite_loss_reports_the_stitch() {
    let mut j = joint(LayerMode::Lora { rank: 2 }, 8);
    j.small.head.bias.set(0, 0, f64::INFINITY);
    j.large.head.bias.set(0, 0, f64::INFINITY);
    let r = train_snnet(&mut j.space, &mut j.small, &mut j.large, &j.dist, &j.train, &small_cfg(3), None);
    match r {
        Err(Error::NonFiniteLoss {
            iteration: 0,
            config_id: Some(id),
            last_good: None,
        }) => {
            let draw = j.dist.sample(Sampler::Ros, &mut Rng::derive(3, "sampler"));
            assert_eq!(id, draw.config_id);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn anchor_routes_equal_anchors_after_training() {
    let mut j = joint(LayerMode::Lora { rank: 2 }, 9);
    run(&mut j, &small_cfg(60));
    let [a, b] = j.space.anchor_ids();
    let (x, _) = j.val.batch(&[0, 1, 2]).unwrap();
    assert!(j
        .space
        .infer_stitched(a, &j.small, &j.large, &x)
        .unwrap()
        .bit_eq(&j.small.infer(&x).unwrap()));
    assert!(j
        .space
        .infer_stitched(b, &j.small, &j.large, &x)
        .unwrap()
        .bit_eq(&j.large.infer(&x).unwrap()));
    assert_eq!(
        config_accuracy(&j.space, &j.small, &j.large, a, &j.val).unwrap(),
        anchor_accuracy(&j.small, &j.val).unwrap()
    );
}

/// Twelve-stage anchors narrow enough that 10⁴ iterations stay cheap.
fn deep_joint(sampler: Sampler) -> (Vec<IterRecord>, [usize; 2], usize, usize) {
    let (train, _) = task(2, 4, 2, 20);
    let small_spec = AnchorSpec {
        depth: 12,
        width: 4,
        heads: 1,
        mlp_ratio: 1.0,
        patch_dim: 4,
        num_classes: 2,
        seq_len: 2,
    };
    let large_spec = AnchorSpec {
        depth: 24,
        width: 8,
        heads: 1,
        ..small_spec.clone()
    };
    let mut rng = Rng::seed_from(12);
    let mut small = AnchorModel::new(small_spec.clone(), &mut rng).unwrap();
    let mut large = AnchorModel::new(large_spec.clone(), &mut rng).unwrap();
    let mut space = StitchSpace::enumerate(&small_spec, &large_spec, SpaceMode::Tws).unwrap();
    let cost = CostModel::new(&small_spec, &large_spec).unwrap();
    let dist = build_distribution(&space, &cost, 2.0 * cost.large.block - cost.small.block).unwrap();
    let cfg = TrainConfig {
        iterations: 10_000,
        batch_size: 1,
        learning_rate: 1e-4,
        sampler,
        layer_mode: LayerMode::Lora { rank: 1 },
        seed: 21,
        ..TrainConfig::default()
    };
    init_stitching_layers(&mut space, &small, &large, &train, 20, &cfg, &mut rng).unwrap();
    let recs = train_snnet(&mut space, &mut small, &mut large, &dist, &train, &cfg, None).unwrap();
    let alone = space
        .anchor_ids()
        .iter()
        .filter(|&&id| dist.bins()[dist.bin_of(id).unwrap()].members.len() == 1)
        .count();
    (recs, space.anchor_ids(), dist.num_bins(), alone + 1000 * space.len())
}

#[test]
fn ros_training_visits_anchors_two_thirteenths_of_the_time() {
    let (recs, anchors, bins, packed) = deep_joint(Sampler::Ros);
    assert_eq!(bins, 13);
    assert_eq!(packed, 134 * 1000 + 2, "134 configs with both anchors alone in their bins");
    let f = recs.iter().filter(|r| anchors.contains(&r.config_id)).count() as f64 / recs.len() as f64;
    assert!((f - 2.0 / 13.0).abs() <= 0.015, "{f}");
}

#[test]
fn uniform_training_visits_anchors_two_in_134() {
    let (recs, anchors, _, _) = deep_joint(Sampler::Uniform);
    let f = recs.iter().filter(|r| anchors.contains(&r.config_id)).count() as f64 / recs.len() as f64;
    assert!((f - 2.0 / 134.0).abs() <= 0.005, "{f}");
}
