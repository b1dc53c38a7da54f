use proptest::prelude::*;
use snstitch::anchors::{to_records, AnchorModel, AnchorSpec};
use snstitch::budget::CostModel;
use snstitch::dataio::{make_synthetic, Dataset, SynthTaskSpec};
use snstitch::evalbench::{anchor_accuracy, emit_curve, pareto_front, sweep, SweepResult, SweepRow};
use snstitch::linalg::Rng;
use snstitch::stitching::{StitchKind, SpaceMode, StitchSpace};
use snstitch::training::{init_stitching_layers, LayerMode, TrainConfig};
use snstitch::Error;

/// O(E²) dominance recount.
fn dominated(points: &[(f64, f64)], i: usize) -> bool {
    let (fi, ai) = points[i];
    points
        .iter()
        .any(|&(fj, aj)| (fj <= fi && aj > ai) || (fj < fi && aj >= ai))
}

fn oracle(points: &[(f64, f64)]) -> Vec<bool> {
    (0..points.len()).map(|i| !dominated(points, i)).collect()
}

#[test]
fn hundred_random_rows_match_recount() {
    let mut rng = Rng::seed_from(100);
    let points: Vec<(f64, f64)> = (0..100).map(|_| (rng.uniform() * 50.0, rng.uniform())).collect();
    assert_eq!(pareto_front(&points), oracle(&points));
}

#[test]
fn pareto_basic_cases() {
    assert_eq!(pareto_front(&[(3.0, 0.1)]), vec![true]);
    assert_eq!(pareto_front(&[(1.0, 0.5), (1.0, 0.6)]), vec![false, true]);
    assert_eq!(pareto_front(&[(1.0, 0.6), (2.0, 0.6)]), vec![true, false]);
    assert_eq!(pareto_front(&[(1.0, 0.6), (1.0, 0.6)]), vec![true, true]);
    assert_eq!(pareto_front(&[(2.0, 0.9), (1.0, 0.5)]), vec![true, true]);
}

proptest! {
    #[test]
    fn pareto_matches_recount_with_ties(raw in prop::collection::vec((0u8..8, 0u8..8), 1..120)) {
        let points: Vec<(f64, f64)> = raw.iter().map(|&(f, a)| (f64::from(f), f64::from(a) / 8.0)).collect();
        let mask = pareto_front(&points);
        prop_assert_eq!(&mask, &oracle(&points));
        let mut front: Vec<(f64, f64)> = points.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
        front.sort_by(|a, b| a.0.total_cmp(&b.0));
        prop_assert!(front.windows(2).all(|w| w[0].1 <= w[1].1));
        prop_assert!(!front.is_empty());
    }
}

struct Setup {
    space: StitchSpace,
    small: AnchorModel,
    large: AnchorModel,
    val: Dataset,
    cost: CostModel,
}

fn setup() -> Setup {
    let task = SynthTaskSpec {
        num_classes: 4,
        train_per_class: 20,
        val_per_class: 30,
        seq_len: 4,
        patch_dim: 8,
        noise_std: 1.0,
        margin: 3.0,
        prototype_seed: 2,
    };
    let (train, val) = make_synthetic(&task, &mut Rng::seed_from(3)).unwrap();
    let s = AnchorSpec {
        depth: 4,
        width: 8,
        heads: 2,
        mlp_ratio: 2.0,
        patch_dim: 8,
        num_classes: 4,
        seq_len: 4,
    };
    let l = AnchorSpec {
        depth: 8,
        width: 16,
        heads: 4,
        ..s.clone()
    };
    let mut rng = Rng::seed_from(4);
    let small = AnchorModel::new(s.clone(), &mut rng).unwrap();
    let large = AnchorModel::new(l.clone(), &mut rng).unwrap();
    let mut space = StitchSpace::enumerate(&s, &l, SpaceMode::Tws).unwrap();
    let cfg = TrainConfig {
        layer_mode: LayerMode::Lora { rank: 4 },
        ..TrainConfig::default()
    };
    init_stitching_layers(&mut space, &small, &large, &train, 40, &cfg, &mut rng).unwrap();
    let cost = CostModel::new(&s, &l).unwrap();
    Setup {
        space,
        small,
        large,
        val,
        cost,
    }
}

#[test]
fn sweep_covers_every_config_in_flops_order() {
    let st = setup();
    let r = sweep(&st.space, &st.small, &st.large, &st.val, &st.cost, 1).unwrap();
    assert_eq!(r.rows.len(), 14);
    assert_eq!(r.pareto.len(), 14);
    assert!(r.rows.windows(2).all(|w| w[0].flops <= w[1].flops));
    let mut ids: Vec<usize> = r.rows.iter().map(|x| x.config_id).collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..14).collect::<Vec<_>>());
    let points: Vec<(f64, f64)> = r.rows.iter().map(|x| (x.flops, x.accuracy)).collect();
    assert_eq!(r.pareto, oracle(&points));
    let accs: Vec<f64> = r.frontier().map(|x| x.accuracy).collect();
    assert!(accs.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn anchor_rows_reproduce_solo_accuracy() {
    let st = setup();
    let r = sweep(&st.space, &st.small, &st.large, &st.val, &st.cost, 2).unwrap();
    let [a, b] = st.space.anchor_ids();
    assert_eq!(r.row(a).unwrap().accuracy, anchor_accuracy(&st.small, &st.val).unwrap());
    assert_eq!(r.row(b).unwrap().accuracy, anchor_accuracy(&st.large, &st.val).unwrap());
    assert_eq!(r.row(a).unwrap().kind, StitchKind::AnchorSmall);
    assert_eq!(r.row(a).unwrap().params, st.small.parameter_count());
    assert_eq!(r.row(b).unwrap().params, st.large.parameter_count());
}

#[test]
fn worker_count_does_not_change_results() {
    let st = setup();
    let one = sweep(&st.space, &st.small, &st.large, &st.val, &st.cost, 1).unwrap();
    for w in [2, 3, 8, 64] {
        assert_eq!(sweep(&st.space, &st.small, &st.large, &st.val, &st.cost, w).unwrap(), one);
    }
}

#[test]
fn sweep_mutates_no_parameters() {
    let st = setup();
    let before = (to_records(&st.small), to_records(&st.large), st.space.layers().clone());
    sweep(&st.space, &st.small, &st.large, &st.val, &st.cost, 4).unwrap();
    assert_eq!((to_records(&st.small), to_records(&st.large), st.space.layers().clone()), before);
}

#[test]
fn curve_artifacts() {
    let st = setup();
    let r = sweep(&st.space, &st.small, &st.large, &st.val, &st.cost, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("sweep.csv");
    let svg_path = emit_curve(&r, &csv_path).unwrap();
    assert_eq!(svg_path, dir.path().join("sweep.svg"));
    let first = std::fs::read(&csv_path).unwrap();
    emit_curve(&r, &csv_path).unwrap();
    assert_eq!(std::fs::read(&csv_path).unwrap(), first);

    let text = String::from_utf8(first).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 15);
    assert_eq!(lines[0], "config_id,kind,flops,params,accuracy,on_pareto");
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields[1], "AnchorSmall");
    assert_eq!(fields[2].parse::<f64>().unwrap(), r.rows[0].flops);
    assert!(matches!(fields[5], "true" | "false"));

    let svg = std::fs::read_to_string(&svg_path).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let root = doc.root_element();
    assert_eq!((root.attribute("width"), root.attribute("height")), (Some("960"), Some("540")));
    let texts: Vec<&str> = doc.descendants().filter_map(|n| n.text()).collect();
    assert!(texts.contains(&"GFLOPs"));
    assert!(texts.contains(&"accuracy"));
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 14);
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 1);
}

#[test]
fn emit_to_missing_directory_is_io_error() {
    let r = SweepResult::from_rows(vec![SweepRow {
        config_id: 0,
        kind: StitchKind::AnchorSmall,
        label: "AnchorSmall".into(),
        flops: 1.0,
        params: 1,
        accuracy: 0.5,
    }]);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("missing").join("x.csv");
    match emit_curve(&r, &p) {
        Err(Error::Io { path, .. }) => assert_eq!(path, p),
        other => panic!("{other:?}"),
    }
}
