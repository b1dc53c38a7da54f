use std::fs;
use std::path::{Path, PathBuf};

use crate::budget::BudgetDistribution;
use crate::error::{Error, Result};
use crate::figure;

/// Writes `bin_flops,count,probability` rows, one per occupied bin.
pub fn write_distribution_csv(dist: &BudgetDistribution, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["bin_flops", "count", "probability"])
        .map_err(|e| Error::csv(path, e))?;
    for (b, bin) in dist.bins().iter().enumerate() {
        let p = dist.probability(b);
        w.write_record([
            format!("{}", dist.tau0(b)),
            bin.members.len().to_string(),
            format!("{}/{}", p.numer(), p.denom()),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.csv` and a histogram `<stem>.svg` into `dir`; returns both paths.
pub fn write_distribution(dist: &BudgetDistribution, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let svg_path = dir.join(format!("{stem}.svg"));
    write_distribution_csv(dist, &csv_path)?;
    let bars: Vec<(f64, f64)> = (0..dist.num_bins())
        .map(|b| {
            let p = dist.probability(b);
            (dist.tau0(b) / 1e9, *p.numer() as f64 / *p.denom() as f64)
        })
        .collect();
    let svg = figure::histogram("stitches per FLOPs bin", "GFLOPs", "probability", &bars);
    fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;
    Ok((csv_path, svg_path))
}
