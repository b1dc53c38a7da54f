//! Building blocks of the anchor transformer with hand-written backward
//! passes. Gradients accumulate into a parameter-shaped struct of the same
//! type as the layer.

use crate::error::Result;
use crate::linalg::{gaussian, Matrix, Rng};

pub(crate) const LN_EPS: f64 = 1e-5;
pub(crate) const INIT_STD: f64 = 0.02;

/// Affine map `x · W + b`, with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub(crate) fn init(rng: &mut Rng, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Linear {
            weight: gaussian(rng, d_in, d_out, INIT_STD)?,
            bias: Matrix::zeros(1, d_out),
        })
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Linear {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: Matrix::zeros(self.bias.rows(), self.bias.cols()),
        }
    }

    pub(crate) fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul(&self.weight)?;
        y.add_row_broadcast(&self.bias)?;
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub(crate) fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Linear) -> Result<Matrix> {
        grad.weight.add_assign(&x.t_matmul(dy)?)?;
        grad.bias.add_assign(&dy.sum_rows())?;
        dy.matmul_t(&self.weight)
    }
}

/// Per-token layer normalization with learned scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub scale: Matrix,
    pub shift: Matrix,
}

#[derive(Clone, Debug)]
pub(crate) struct LayerNormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub(crate) fn new(width: usize) -> Self {
        LayerNorm {
            scale: Matrix::filled(1, width, 1.0),
            shift: Matrix::zeros(1, width),
        }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        LayerNorm {
            scale: Matrix::zeros(1, self.scale.cols()),
            shift: Matrix::zeros(1, self.shift.cols()),
        }
    }

    pub(crate) fn forward(&self, x: &Matrix) -> (Matrix, LayerNormCache) {
        let (rows, d) = x.shape();
        let mut xhat = Matrix::zeros(rows, d);
        let mut y = Matrix::zeros(rows, d);
        let mut inv_std = Vec::with_capacity(rows);
        let (g, b) = (self.scale.data(), self.shift.data());
        for i in 0..rows {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            let xh = xhat.row_mut(i);
            for j in 0..d {
                xh[j] = (row[j] - mean) * inv;
            }
            let yr = y.row_mut(i);
            let xh = xhat.row(i);
            for j in 0..d {
                yr[j] = xh[j] * g[j] + b[j];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub(crate) fn backward(
        &self,
        cache: &LayerNormCache,
        dy: &Matrix,
        grad: &mut LayerNorm,
    ) -> Result<Matrix> {
        let (rows, d) = dy.shape();
        let g = self.scale.data();
        let mut dx = Matrix::zeros(rows, d);
        let mut dscale = vec![0.0; d];
        let mut dshift = vec![0.0; d];
        let mut dxhat = vec![0.0; d];
        for i in 0..rows {
            let dyr = dy.row(i);
            let xh = cache.xhat.row(i);
            let mut sum = 0.0;
            let mut sum_x = 0.0;
            for j in 0..d {
                dscale[j] += dyr[j] * xh[j];
                dshift[j] += dyr[j];
                dxhat[j] = dyr[j] * g[j];
                sum += dxhat[j];
                sum_x += dxhat[j] * xh[j];
            }
            let inv = cache.inv_std[i];
            let dxr = dx.row_mut(i);
            for j in 0..d {
                dxr[j] = inv * (dxhat[j] - sum / d as f64 - xh[j] * sum_x / d as f64);
            }
        }
        grad.scale.add_assign(&Matrix::row_vector(&dscale))?;
        grad.shift.add_assign(&Matrix::row_vector(&dshift))?;
        Ok(dx)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Multi-head self-attention core (no projections): consumes the packed
/// `[Q | K | V]` activations of shape `(batch·N) × 3D` and returns the
/// concatenated head outputs `(batch·N) × D` plus the softmax weights.
pub(crate) fn attention_forward(
    qkv: &Matrix,
    seq_len: usize,
    heads: usize,
) -> (Matrix, Vec<f64>) {
    let rows = qkv.rows();
    let d = qkv.cols() / 3;
    let dh = d / heads;
    let batch = rows / seq_len;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Matrix::zeros(rows, d);
    let mut probs = vec![0.0; batch * heads * seq_len * seq_len];
    let mut scores = vec![0.0; seq_len];
    for s in 0..batch {
        for h in 0..heads {
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            let p_base = (s * heads + h) * seq_len * seq_len;
            for i in 0..seq_len {
                let qi = &qkv.row(s * seq_len + i)[qo..qo + dh];
                let mut max = f64::NEG_INFINITY;
                for (j, score) in scores.iter_mut().enumerate() {
                    let kj = &qkv.row(s * seq_len + j)[ko..ko + dh];
                    let dot: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                    *score = dot * scale;
                    max = max.max(*score);
                }
                let mut total = 0.0;
                for score in scores.iter_mut() {
                    *score = (*score - max).exp();
                    total += *score;
                }
                let prow = &mut probs[p_base + i * seq_len..p_base + (i + 1) * seq_len];
                for (p, score) in prow.iter_mut().zip(&scores) {
                    *p = score / total;
                }
                let orow = &mut out.row_mut(s * seq_len + i)[h * dh..(h + 1) * dh];
                for (j, &p) in prow.iter().enumerate() {
                    let vj = &qkv.row(s * seq_len + j)[vo..vo + dh];
                    for (o, v) in orow.iter_mut().zip(vj) {
                        *o += p * v;
                    }
                }
            }
        }
    }
    (out, probs)
}

/// Backward of [`attention_forward`]: returns `∂L/∂qkv`.
pub(crate) fn attention_backward(
    qkv: &Matrix,
    probs: &[f64],
    d_out: &Matrix,
    seq_len: usize,
    heads: usize,
) -> Matrix {
    let rows = qkv.rows();
    let d = qkv.cols() / 3;
    let dh = d / heads;
    let batch = rows / seq_len;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dqkv = Matrix::zeros(rows, 3 * d);
    let mut dp = vec![0.0; seq_len];
    for s in 0..batch {
        for h in 0..heads {
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            let p_base = (s * heads + h) * seq_len * seq_len;
            for i in 0..seq_len {
                let prow = &probs[p_base + i * seq_len..p_base + (i + 1) * seq_len];
                let doi = &d_out.row(s * seq_len + i)[h * dh..(h + 1) * dh];
                // dV_j += p_ij · dO_i ; dP_ij = dO_i · V_j
                for j in 0..seq_len {
                    let r = s * seq_len + j;
                    let vj = &qkv.row(r)[vo..vo + dh];
                    dp[j] = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                    let dvj = &mut dqkv.row_mut(r)[vo..vo + dh];
                    for (dv, g) in dvj.iter_mut().zip(doi) {
                        *dv += prow[j] * g;
                    }
                }
                let inner: f64 = prow.iter().zip(&dp).map(|(p, g)| p * g).sum();
                for j in 0..seq_len {
                    let ds = prow[j] * (dp[j] - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let ri = s * seq_len + i;
                    let rj = s * seq_len + j;
                    // dQ_i += ds · K_j ; dK_j += ds · Q_i
                    for c in 0..dh {
                        let kj = qkv.get(rj, ko + c);
                        let qi = qkv.get(ri, qo + c);
                        let cur = dqkv.get(ri, qo + c);
                        dqkv.set(ri, qo + c, cur + ds * kj);
                        let cur = dqkv.get(rj, ko + c);
                        dqkv.set(rj, ko + c, cur + ds * qi);
                    }
                }
            }
        }
    }
    dqkv
}
