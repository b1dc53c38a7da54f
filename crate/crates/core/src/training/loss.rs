use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Mean softmax cross-entropy over the batch, with its gradient w.r.t. the
/// logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (batch, classes) = logits.shape();
    if labels.len() != batch || batch == 0 {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} labels for {batch} rows", labels.len()),
        ));
    }
    let mut grad = Matrix::zeros(batch, classes);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Index(format!("label {y} with {classes} classes")));
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[y];
        let g = grad.row_mut(i);
        for (j, v) in row.iter().enumerate() {
            g[j] = (v - log_z).exp() / batch as f64;
        }
        g[y] -= 1.0 / batch as f64;
    }
    Ok((total / batch as f64, grad))
}

/// Index of the largest logit per row.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
