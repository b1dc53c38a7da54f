//! Acceptance gate. Each test prints one `criterion N: PASS|FAIL` line to
//! stderr (bypassing the harness's capture) and then asserts.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{
    brute_force_masks, central_difference, deit3_large, deit3_small, mask_of, rel_err, roughened,
    random_input, tiny_spec, DEIT3_STEP,
};
use num_rational::Ratio;
use snstitch::anchors::{load_checkpoint, AnchorModel, AnchorSpec};
use snstitch::budget::{backbone_flops, build_distribution, BudgetDistribution, CostModel, Sampler};
use snstitch::cli::{
    cmd_enumerate, cmd_pretrain, cmd_sweep, cmd_train, load_data, Context, ExperimentConfig,
    SMALL_CKPT, LARGE_CKPT, SWEEP_CSV, TRAIN_LOG,
};
use snstitch::dataio::{make_synthetic, SynthTaskSpec};
use snstitch::evalbench::anchor_accuracy;
use snstitch::linalg::{gaussian, Matrix, Rng};
use snstitch::stitching::{
    enumerate_configs, enumerate_space, ls_init, space_size, AnchorId, CrossingId, SpaceMode,
    StitchConfig, StitchKind, StitchLayer, StitchSpace,
};
use snstitch::training::{cross_entropy, init_stitching_layers, train_snnet, LayerMode, TrainConfig};

/// Prints the verdict line, then fails the test if any check failed.
fn report(n: u32, title: &str, checks: &[(bool, String)]) {
    let ok = checks.iter().all(|(p, _)| *p);
    let detail: Vec<&str> = checks.iter().map(|(_, d)| d.as_str()).collect();
    let line = format!(
        "criterion {n}: {} {title} [{}]\n",
        if ok { "PASS" } else { "FAIL" },
        detail.join("; ")
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    for (pass, d) in checks {
        assert!(*pass, "criterion {n}: {d}");
    }
}

fn check(pass: bool, detail: impl Into<String>) -> (bool, String) {
    (pass, detail.into())
}

fn timed(limit: Duration, start: Instant) -> (bool, String) {
    let t = start.elapsed();
    check(t < limit, format!("{:.3}s < {}s", t.as_secs_f64(), limit.as_secs()))
}

#[test]
fn criterion_01_stitch_space_counts() {
    let start = Instant::now();
    let tws = enumerate_configs(12, 24, SpaceMode::Tws).unwrap().len();
    let v1 = enumerate_configs(12, 24, SpaceMode::V1Fs).unwrap().len();
    let mut brute_ok = true;
    for l in 2..=16usize {
        let configs = enumerate_configs(l, 2 * l, SpaceMode::Tws).unwrap();
        let masks: BTreeSet<u32> = configs.iter().map(|c| mask_of(c, l, 2)).collect();
        let closed = 2 + 2 * (l - 1) + (l - 1) * (l - 2);
        brute_ok &= masks.len() == configs.len()
            && masks == brute_force_masks(l, SpaceMode::Tws)
            && configs.len() == closed
            && space_size(l, SpaceMode::Tws) == closed;
    }
    report(
        1,
        "stitch-space counts",
        &[
            check(tws == 134, format!("TWS {tws}")),
            check(v1 == 13, format!("V1-FS {v1}")),
            check(brute_ok, "closed form = brute force for L in 2..=16"),
            timed(Duration::from_secs(1), start),
        ],
    );
}

fn deit3_distribution() -> (StitchSpace, BudgetDistribution) {
    let (s, l) = (deit3_small(), deit3_large());
    let space = enumerate_space(&s, &l, SpaceMode::Tws).unwrap();
    let cost = CostModel::new(&s, &l).unwrap();
    let dist = build_distribution(&space, &cost, DEIT3_STEP).unwrap();
    (space, dist)
}

fn anchor_probability(space: &StitchSpace, dist: &BudgetDistribution, sampler: Sampler) -> Ratio<u64> {
    space
        .anchor_ids()
        .iter()
        .map(|&a| dist.config_probability(sampler, a).unwrap())
        .sum()
}

#[test]
fn criterion_02_sampling_probabilities() {
    let start = Instant::now();
    let (space, dist) = deit3_distribution();
    let anchors = space.anchor_ids();
    let alone = anchors
        .iter()
        .all(|&a| dist.bins()[dist.bin_of(a).unwrap()].members.len() == 1);
    let analytic = anchor_probability(&space, &dist, Sampler::Ros);
    let freq = |sampler, seed| {
        let mut rng = Rng::seed_from(seed);
        let hits = (0..10_000)
            .filter(|_| anchors.contains(&dist.sample(sampler, &mut rng).config_id))
            .count();
        hits as f64 / 10_000.0
    };
    let ros = freq(Sampler::Ros, 2);
    let uni = freq(Sampler::Uniform, 3);
    report(
        2,
        "sampling probabilities",
        &[
            check(alone && dist.num_bins() == 13, format!("{} bins, anchors alone {alone}", dist.num_bins())),
            check(analytic == Ratio::new(2, 13), format!("analytic ROS {analytic}")),
            check((ros - 2.0 / 13.0).abs() <= 0.015, format!("ROS frequency {ros:.4}")),
            check(space.len() == 134 && (uni - 2.0 / 134.0).abs() <= 0.005, format!("uniform frequency {uni:.4}")),
            timed(Duration::from_secs(5), start),
        ],
    );
}

#[test]
fn criterion_03_ros_boost_factor() {
    let (space, dist) = deit3_distribution();
    let ros = anchor_probability(&space, &dist, Sampler::Ros);
    let uni = anchor_probability(&space, &dist, Sampler::Uniform);
    let boost = ros / uni;
    report(
        3,
        "ROS boost factor",
        &[
            check(uni == Ratio::new(2, 134), format!("uniform {uni}")),
            check(boost == Ratio::new(134, 13), format!("boost {boost} ≈ {:.2}", 134.0 / 13.0)),
        ],
    );
}

#[test]
fn criterion_04_flops_calibration() {
    let small = backbone_flops(1024, 384, 12, 4.0) / 1e9;
    let large = backbone_flops(1024, 1024, 24, 4.0) / 1e9;
    report(
        4,
        "FLOPs calibration",
        &[
            check((small / 32.0 - 1.0).abs() <= 0.05, format!("D=384 L=12: {small:.1}G vs 32G")),
            check((large / 363.0 - 1.0).abs() <= 0.05, format!("D=1024 L=24: {large:.1}G vs 363G")),
        ],
    );
}

#[test]
fn criterion_05_ls_initialization() {
    let mut rng = Rng::seed_from(5);
    let x = gaussian(&mut rng, 64, 12, 1.0).unwrap();
    let w = gaussian(&mut rng, 12, 7, 1.0).unwrap();
    let y = x.matmul(&w).unwrap();
    let m = ls_init(&x, &y).unwrap();
    let recovery = m.max_abs_diff(&w).unwrap();

    let y_noisy = gaussian(&mut rng, 64, 7, 1.0).unwrap();
    let m = ls_init(&x, &y_noisy).unwrap();
    // ∇_M ‖X M − Y‖²_F = 2 Xᵀ (X M − Y)
    let grad = x.t_matmul(&x.matmul(&m).unwrap().sub(&y_noisy).unwrap()).unwrap().scale(2.0);
    report(
        5,
        "LS initialization",
        &[
            check(recovery <= 1e-8, format!("planted map error {recovery:.2e}")),
            check(grad.max_abs() <= 1e-6, format!("residual gradient {:.2e}", grad.max_abs())),
        ],
    );
}

struct Toy {
    space: StitchSpace,
    small: AnchorModel,
    large: AnchorModel,
    x: Matrix,
}

fn toy(seed: u64, lora_rank: usize) -> Toy {
    let small_spec = AnchorSpec::toy_small(16, 10, 8);
    let large_spec = AnchorSpec::toy_large(16, 10, 8);
    let mut rng = Rng::seed_from(seed);
    let small = AnchorModel::new(small_spec.clone(), &mut rng).unwrap();
    let large = AnchorModel::new(large_spec.clone(), &mut rng).unwrap();
    let mut space = enumerate_space(&small_spec, &large_spec, SpaceMode::Tws).unwrap();
    let calib = gaussian(&mut rng, 100 * 8, 16, 1.0).unwrap();
    space.ls_initialize(&small, &large, &calib).unwrap();
    space.attach_lora(lora_rank, 0.02, &mut rng).unwrap();
    let x = gaussian(&mut rng, 4 * 8, 16, 1.0).unwrap();
    Toy {
        space,
        small,
        large,
        x,
    }
}

/// Executes a route by hand, crossing with M alone.
fn ls_only_route(t: &Toy, config: &StitchConfig) -> Matrix {
    let model = |a| match a {
        AnchorId::Small => &t.small,
        AnchorId::Large => &t.large,
    };
    let mut h = model(config.segments[0].anchor).embed(&t.x).unwrap();
    for (i, seg) in config.segments.iter().enumerate() {
        if i > 0 {
            h = h.matmul(&t.space.layer(&config.crossings[i - 1]).unwrap().m).unwrap();
        }
        h = model(seg.anchor).forward_range(&h, seg.from, seg.to).unwrap();
    }
    model(config.head_anchor()).head_forward(&h).unwrap().0
}

#[test]
fn criterion_06_lora_zero_update() {
    let t = toy(6, 16);
    let mut worst: f64 = 0.0;
    for (id, config) in t.space.configs().iter().enumerate() {
        let (got, _) = t.space.forward_stitched(id, &t.small, &t.large, &t.x).unwrap();
        worst = worst.max(got.max_abs_diff(&ls_only_route(&t, config)).unwrap());
    }
    let a_zero = t
        .space
        .layers()
        .values()
        .all(|l| l.lora.as_ref().is_some_and(|f| f.a.max_abs() == 0.0));
    report(
        6,
        "LoRA zero update",
        &[
            check(a_zero, "every A starts at zero"),
            check(worst <= 1e-12, format!("{} routes, max deviation {worst:.1e}", t.space.len())),
        ],
    );
}

#[test]
fn criterion_07_freeze_invariant() {
    let task = SynthTaskSpec {
        num_classes: 4,
        train_per_class: 40,
        val_per_class: 1,
        seq_len: 4,
        patch_dim: 8,
        noise_std: 1.0,
        margin: 3.0,
        prototype_seed: 7,
    };
    let (train, _) = make_synthetic(&task, &mut Rng::seed_from(70)).unwrap();
    let s = AnchorSpec {
        depth: 4,
        width: 16,
        heads: 2,
        mlp_ratio: 2.0,
        patch_dim: 8,
        num_classes: 4,
        seq_len: 4,
    };
    let l = AnchorSpec {
        depth: 8,
        width: 24,
        heads: 3,
        ..s.clone()
    };
    let mut rng = Rng::seed_from(71);
    let mut small = AnchorModel::new(s.clone(), &mut rng).unwrap();
    let mut large = AnchorModel::new(l.clone(), &mut rng).unwrap();
    let mut space = enumerate_space(&s, &l, SpaceMode::Tws).unwrap();
    let cost = CostModel::new(&s, &l).unwrap();
    let dist = build_distribution(&space, &cost, 2.0 * cost.large.block - cost.small.block).unwrap();
    let cfg = TrainConfig {
        iterations: 500,
        batch_size: 8,
        learning_rate: 1e-2,
        layer_mode: LayerMode::Lora { rank: 4 },
        seed: 72,
        ..TrainConfig::default()
    };
    init_stitching_layers(&mut space, &small, &large, &train, 64, &cfg, &mut rng).unwrap();
    let before: Vec<(CrossingId, StitchLayer)> =
        space.layers().iter().map(|(k, v)| (*k, v.clone())).collect();
    train_snnet(&mut space, &mut small, &mut large, &dist, &train, &cfg, None).unwrap();

    let mut m_same = 0;
    let mut lora_moved = 0;
    for (id, old) in &before {
        let new = space.layer(id).unwrap();
        m_same += usize::from(new.m.bit_eq(&old.m));
        lora_moved += usize::from(new.lora != old.lora);
    }
    report(
        7,
        "freeze invariant",
        &[
            check(m_same == before.len(), format!("{m_same}/{} M bit-identical after 500 iterations", before.len())),
            check(lora_moved > 0, format!("{lora_moved} LoRA factors trained")),
        ],
    );
}

#[test]
fn criterion_08_gradient_correctness() {
    let spec = tiny_spec();
    let model = roughened(spec.clone(), 81);
    let x = random_input(&spec, 2, 82);
    let labels = [1, 2];
    let (logits, cache) = model.forward(&x).unwrap();
    let (_, dlogits) = cross_entropy(&logits, &labels).unwrap();
    let grads = model.backward(&cache, &dlogits).unwrap();
    let loss = |m: &AnchorModel| cross_entropy(&m.forward(&x).unwrap().0, &labels).unwrap().0;
    let mut anchor_worst: f64 = 0.0;
    let mut anchor_n = 0;
    for (name, g) in grads.named() {
        for idx in 0..g.len() {
            let fd = central_difference(
                &model,
                1e-5,
                |m, e| {
                    let (_, t) = m.named_tensors_mut().into_iter().find(|(n, _)| *n == name).unwrap();
                    t.data_mut()[idx] += e;
                },
                loss,
            );
            anchor_worst = anchor_worst.max(rel_err(g.data()[idx], fd));
            anchor_n += 1;
        }
    }

    let mut t = toy(83, 4);
    let mut rng = Rng::seed_from(84);
    for (_, layer) in t.space.layers_mut() {
        let a = &mut layer.lora.as_mut().unwrap().a;
        *a = gaussian(&mut rng, a.rows(), a.cols(), 0.3).unwrap();
    }
    t.x = gaussian(&mut rng, 3 * 8, 16, 1.0).unwrap();
    let fsf = StitchConfig::from_kind(StitchKind::FSF, &[1, 3], 4, 8).unwrap();
    let id = t.space.config_id(&fsf).unwrap();
    let labels = [3, 7, 1];
    let (logits, cache) = t.space.forward_stitched(id, &t.small, &t.large, &t.x).unwrap();
    let (_, dlogits) = cross_entropy(&logits, &labels).unwrap();
    let grads = t.space.backward_stitched(&t.small, &t.large, &cache, &dlogits).unwrap();
    let loss = |s: &StitchSpace| {
        cross_entropy(&s.infer_stitched(id, &t.small, &t.large, &t.x).unwrap(), &labels)
            .unwrap()
            .0
    };
    let mut lora_worst: f64 = 0.0;
    let mut lora_n = 0;
    for (cid, g) in &grads.layers {
        let f = g.lora.as_ref().unwrap();
        for (is_b, gm) in [(true, &f.b), (false, &f.a)] {
            for idx in 0..gm.len() {
                let fd = central_difference(
                    &t.space,
                    1e-5,
                    |s, e| {
                        let l = s.layer_mut(cid).unwrap().lora.as_mut().unwrap();
                        let target = if is_b { &mut l.b } else { &mut l.a };
                        target.data_mut()[idx] += e;
                    },
                    loss,
                );
                lora_worst = lora_worst.max(rel_err(gm.data()[idx], fd));
                lora_n += 1;
            }
        }
    }
    report(
        8,
        "gradient correctness",
        &[
            check(anchor_worst <= 1e-4, format!("{anchor_n} anchor entries, worst {anchor_worst:.1e}")),
            check(
                grads.layers.len() == 2 && lora_worst <= 1e-4,
                format!("{lora_n} B/A entries through FSF(1,3), worst {lora_worst:.1e}"),
            ),
        ],
    );
}

/// Runs pretrain → enumerate → train → sweep in `dir`.
fn pipeline(cfg: &ExperimentConfig, dir: &Path, workers: usize) -> Context {
    let cfg = ExperimentConfig {
        out_dir: dir.to_path_buf(),
        ..cfg.clone()
    };
    cfg.validate().unwrap();
    let ctx = Context::new(cfg, workers).unwrap();
    cmd_pretrain(&ctx).unwrap();
    cmd_enumerate(&ctx).unwrap();
    cmd_train(&ctx).unwrap();
    cmd_sweep(&ctx).unwrap();
    ctx
}

struct Row {
    kind: String,
    flops: f64,
    accuracy: f64,
    on_pareto: bool,
}

fn read_sweep(path: &Path) -> Vec<Row> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            Row {
                kind: rec[1].to_string(),
                flops: rec[2].parse().unwrap(),
                accuracy: rec[4].parse().unwrap(),
                on_pareto: rec[5].parse().unwrap(),
            }
        })
        .collect()
}

#[test]
fn criterion_09_end_to_end_toy_experiment() {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    assert_eq!((cfg.small_depth, cfg.small_width, cfg.large_depth, cfg.large_width), (4, 32, 8, 64));
    assert_eq!((cfg.margin, cfg.noise_std, cfg.iterations), (3.0, 1.0, 2000));
    let dir = tempfile::tempdir().unwrap();
    let ctx = pipeline(&cfg, dir.path(), 4);

    let (_, val) = load_data(&ctx.cfg).unwrap();
    let solo_small = anchor_accuracy(&load_checkpoint(&ctx.out(SMALL_CKPT)).unwrap(), &val).unwrap();
    let solo_large = anchor_accuracy(&load_checkpoint(&ctx.out(LARGE_CKPT)).unwrap(), &val).unwrap();
    let rows = read_sweep(&ctx.out(SWEEP_CSV));
    let chance = 2.0 / cfg.num_classes as f64;
    let worst = rows.iter().map(|r| r.accuracy).fold(1.0, f64::min);
    let joint = |kind: &str| rows.iter().find(|r| r.kind == kind).unwrap().accuracy;
    let (js, jl) = (joint("AnchorSmall"), joint("AnchorLarge"));
    let mut front: Vec<&Row> = rows.iter().filter(|r| r.on_pareto).collect();
    front.sort_by(|a, b| a.flops.total_cmp(&b.flops));
    let monotone = front.windows(2).all(|w| w[0].accuracy <= w[1].accuracy);
    report(
        9,
        "end-to-end toy experiment",
        &[
            check(
                solo_small >= 0.95 && solo_large >= 0.95,
                format!("solo accuracy {solo_small:.3}/{solo_large:.3}"),
            ),
            check(rows.len() == 14 && worst >= chance, format!("{} configs, worst {worst:.3} vs {chance:.2}", rows.len())),
            check(
                js >= 0.9 * solo_small && jl >= 0.9 * solo_large,
                format!("joint anchors {js:.3}/{jl:.3}"),
            ),
            check(monotone && !front.is_empty(), format!("{}-point frontier non-decreasing", front.len())),
            timed(Duration::from_secs(600), start),
        ],
    );
}

#[test]
fn criterion_10_determinism() {
    let cfg = ExperimentConfig {
        seed: 10,
        small_width: 16,
        small_heads: 2,
        large_width: 32,
        large_heads: 4,
        num_classes: 4,
        seq_len: 4,
        patch_dim: 8,
        train_per_class: 40,
        val_per_class: 20,
        pretrain_iterations: 60,
        iterations: 150,
        batch_size: 16,
        stitch_layer_mode: "lora(4)".into(),
        calib_samples: 64,
        ..ExperimentConfig::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(&cfg, a.path(), 1);
    let second = pipeline(&cfg, b.path(), 3);
    let read = |ctx: &Context, f| std::fs::read(ctx.out(f)).unwrap();
    let sweep_same = read(&first, SWEEP_CSV) == read(&second, SWEEP_CSV);
    let log_same = read(&first, TRAIN_LOG) == read(&second, TRAIN_LOG);
    report(
        10,
        "determinism",
        &[
            check(sweep_same, "sweep CSVs byte-identical"),
            check(log_same, "training logs byte-identical"),
        ],
    );
}
