use crate::error::{Error, Result};
use crate::linalg::{gaussian, pinv_with_rank, Matrix, Rng, DEFAULT_PINV_TOL};

/// Default LoRA rank of stitching layers.
pub const DEFAULT_LORA_RANK: usize = 16;
/// Default standard deviation of the Gaussian-initialized `B` factor.
pub const DEFAULT_LORA_STD: f64 = 0.02;

/// Trainable low-rank update `ΔM = B · A`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraFactors {
    /// `D_in × r`, Gaussian at construction.
    pub b: Matrix,
    /// `r × D_out`, zero at construction.
    pub a: Matrix,
}

/// Linear map between the activation spaces of two anchors:
/// `X · M + X · B · A`, where `M` is the least-squares solution and the
/// optional LoRA factors adapt it.
#[derive(Clone, Debug, PartialEq)]
pub struct StitchLayer {
    /// `D_in × D_out`.
    pub m: Matrix,
    pub lora: Option<LoraFactors>,
}

/// Gradients of a [`StitchLayer`].
#[derive(Clone, Debug, PartialEq)]
pub struct StitchLayerGrads {
    pub m: Matrix,
    pub lora: Option<LoraFactors>,
}

impl StitchLayer {
    pub fn new(m: Matrix) -> Self {
        StitchLayer { m, lora: None }
    }

    /// Attaches LoRA factors: `B ~ N(0, std²)`, `A = 0`, so the layer's
    /// output is unchanged.
    pub fn attach_lora(&mut self, rank: usize, std: f64, rng: &mut Rng) -> Result<()> {
        let (d_in, d_out) = self.m.shape();
        if rank == 0 || rank > d_in.min(d_out) {
            return Err(Error::Config(format!(
                "LoRA rank {rank} must lie in [1, min({d_in}, {d_out})]"
            )));
        }
        self.lora = Some(LoraFactors {
            b: gaussian(rng, d_in, rank, std)?,
            a: Matrix::zeros(rank, d_out),
        });
        Ok(())
    }

    pub fn d_in(&self) -> usize {
        self.m.rows()
    }

    pub fn d_out(&self) -> usize {
        self.m.cols()
    }

    pub fn rank(&self) -> usize {
        self.lora.as_ref().map_or(0, |l| l.a.rows())
    }

    /// `B · A`, or `None` without LoRA.
    pub fn delta(&self) -> Option<Matrix> {
        self.lora
            .as_ref()
            .map(|l| l.b.matmul(&l.a).expect("LoRA factor shapes are consistent"))
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.d_in() {
            return Err(Error::shape(
                "stitch layer",
                format!("input has {} columns, layer expects {}", x.cols(), self.d_in()),
            ));
        }
        let mut y = x.matmul(&self.m)?;
        if let Some(l) = &self.lora {
            y.add_assign(&x.matmul(&l.b)?.matmul(&l.a)?)?;
        }
        Ok(y)
    }

    pub fn zero_grads(&self) -> StitchLayerGrads {
        StitchLayerGrads {
            m: Matrix::zeros(self.d_in(), self.d_out()),
            lora: self.lora.as_ref().map(|l| LoraFactors {
                b: Matrix::zeros(l.b.rows(), l.b.cols()),
                a: Matrix::zeros(l.a.rows(), l.a.cols()),
            }),
        }
    }

    /// Accumulates gradients for `M`, `B` and `A` and returns `∂L/∂X`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut StitchLayerGrads) -> Result<Matrix> {
        grad.m.add_assign(&x.t_matmul(dy)?)?;
        let mut dx = dy.matmul_t(&self.m)?;
        if let (Some(l), Some(g)) = (&self.lora, grad.lora.as_mut()) {
            let xb = x.matmul(&l.b)?;
            let dy_at = dy.matmul_t(&l.a)?;
            // y = (X B) A:  dA = (X B)ᵀ dY,  dB = Xᵀ dY Aᵀ,  dX += dY Aᵀ Bᵀ
            g.a.add_assign(&xb.t_matmul(dy)?)?;
            g.b.add_assign(&x.t_matmul(&dy_at)?)?;
            dx.add_assign(&dy_at.matmul_t(&l.b)?)?;
        }
        Ok(dx)
    }
}

/// Least-squares stitching matrix `M = X_in† · X_out`, the minimizer of
/// `‖X_in · M − X_out‖_F`. A rank-deficient `X_in` still yields the
/// minimum-norm solution, with a warning.
pub fn ls_init(x_in: &Matrix, x_out: &Matrix) -> Result<Matrix> {
    if x_in.rows() != x_out.rows() {
        return Err(Error::shape(
            "ls_init",
            format!("{} input rows vs {} target rows", x_in.rows(), x_out.rows()),
        ));
    }
    let (p, rank) = pinv_with_rank(x_in, DEFAULT_PINV_TOL)?;
    if rank < x_in.cols() {
        log::warn!(
            "least-squares stitching input is rank deficient ({rank} of {} columns); \
             using the minimum-norm solution",
            x_in.cols()
        );
    }
    p.matmul(x_out)
}
