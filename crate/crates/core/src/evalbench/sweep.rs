use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::anchors::AnchorModel;
use crate::budget::CostModel;
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::evalbench::pareto_front;
use crate::figure;
use crate::linalg::Matrix;
use crate::stitching::{StitchKind, StitchSpace};
use crate::training::argmax_rows;

/// Samples per evaluation forward pass.
pub const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub config_id: usize,
    pub kind: StitchKind,
    pub label: String,
    pub flops: f64,
    pub params: usize,
    pub accuracy: f64,
}

/// Rows sorted by FLOPs (config id breaking ties) with their frontier flags.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub pareto: Vec<bool>,
}

impl SweepResult {
    pub fn from_rows(mut rows: Vec<SweepRow>) -> Self {
        rows.sort_by_key(|r| r.config_id);
        rows.sort_by(|a, b| a.flops.total_cmp(&b.flops));
        let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.flops, r.accuracy)).collect();
        let pareto = pareto_front(&points);
        SweepResult { rows, pareto }
    }

    pub fn row(&self, config_id: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.config_id == config_id)
    }

    /// Frontier rows in FLOPs order.
    pub fn frontier(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().zip(&self.pareto).filter(|(_, &p)| p).map(|(r, _)| r)
    }
}

fn accuracy_with(data: &Dataset, mut logits: impl FnMut(&Matrix) -> Result<Matrix>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let mut correct = 0usize;
    for idx in data.chunks(EVAL_BATCH) {
        let (x, labels) = data.batch(&idx)?;
        let pred = argmax_rows(&logits(&x)?);
        correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Top-1 accuracy of a solo anchor.
pub fn anchor_accuracy(model: &AnchorModel, data: &Dataset) -> Result<f64> {
    accuracy_with(data, |x| model.infer(x))
}

/// Top-1 accuracy of one stitched route.
pub fn config_accuracy(
    space: &StitchSpace,
    small: &AnchorModel,
    large: &AnchorModel,
    config_id: usize,
    data: &Dataset,
) -> Result<f64> {
    accuracy_with(data, |x| space.infer_stitched(config_id, small, large, x))
}

/// Evaluates every config on `data` with up to `workers` threads. The
/// result does not depend on the worker count.
pub fn sweep(
    space: &StitchSpace,
    small: &AnchorModel,
    large: &AnchorModel,
    data: &Dataset,
    cost: &CostModel,
    workers: usize,
) -> Result<SweepResult> {
    let n = space.len();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Result<(usize, f64)>>> = Mutex::new(Vec::with_capacity(n));
    let work = || loop {
        let id = next.fetch_add(1, Ordering::Relaxed);
        if id >= n {
            break;
        }
        let r = config_accuracy(space, small, large, id, data).map(|a| (id, a));
        results.lock().expect("no worker panicked").push(r);
    };
    std::thread::scope(|s| {
        for _ in 1..workers.clamp(1, n.max(1)) {
            s.spawn(work);
        }
        work();
    });
    let mut acc = vec![0.0; n];
    for r in results.into_inner().expect("no worker panicked") {
        let (id, a) = r?;
        acc[id] = a;
    }
    let rows = space
        .configs()
        .iter()
        .enumerate()
        .map(|(id, c)| {
            Ok(SweepRow {
                config_id: id,
                kind: c.kind,
                label: c.label(),
                flops: cost.flops_of(c),
                params: space.parameter_count(id, small, large)?,
                accuracy: acc[id],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult::from_rows(rows))
}

/// Writes the sweep as CSV at `csv_path` and as a scatter plot with the
/// frontier next to it (same stem, `.svg`). Returns the SVG path.
pub fn emit_curve(result: &SweepResult, csv_path: &Path) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(csv_path).map_err(|e| Error::csv(csv_path, e))?;
    w.write_record(["config_id", "kind", "flops", "params", "accuracy", "on_pareto"])
        .map_err(|e| Error::csv(csv_path, e))?;
    for (r, &p) in result.rows.iter().zip(&result.pareto) {
        w.write_record([
            r.config_id.to_string(),
            r.kind.as_str().to_string(),
            format!("{}", r.flops),
            r.params.to_string(),
            format!("{}", r.accuracy),
            p.to_string(),
        ])
        .map_err(|e| Error::csv(csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;

    let svg_path = csv_path.with_extension("svg");
    let points: Vec<(f64, f64)> = result.rows.iter().map(|r| (r.flops / 1e9, r.accuracy)).collect();
    let line: Vec<(f64, f64)> = result.frontier().map(|r| (r.flops / 1e9, r.accuracy)).collect();
    let svg = figure::scatter("accuracy vs FLOPs of every stitch", "GFLOPs", "accuracy", &points, &line);
    fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;
    Ok(svg_path)
}
