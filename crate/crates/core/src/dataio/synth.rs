use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Split};
use crate::error::{Error, Result};
use crate::linalg::Rng;

/// Class-conditional Gaussian token clouds.
///
/// Every class owns a prototype direction in token space; prototypes are
/// mutually orthogonal and pairwise `margin` apart. Each token of a sample is
/// its class prototype plus isotropic noise of standard deviation `noise_std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthTaskSpec {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub seq_len: usize,
    pub patch_dim: usize,
    pub noise_std: f64,
    pub margin: f64,
    /// Seed of the prototype directions, separate from the sample noise.
    pub prototype_seed: u64,
}

impl SynthTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.num_classes > self.patch_dim {
            return bad(format!(
                "{} orthogonal prototypes do not fit in patch_dim {}",
                self.num_classes, self.patch_dim
            ));
        }
        if self.seq_len == 0 || self.train_per_class == 0 {
            return bad("seq_len and train_per_class must be positive".into());
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be non-negative, got {}", self.noise_std));
        }
        Ok(())
    }

    /// Orthogonal prototypes scaled so that any two are `margin` apart.
    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        let mut rng = Rng::seed_from(self.prototype_seed);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(self.num_classes);
        while basis.len() < self.num_classes {
            let mut v: Vec<f64> = (0..self.patch_dim).map(|_| rng.normal()).collect();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
            }
        }
        let scale = self.margin / std::f64::consts::SQRT_2;
        for v in &mut basis {
            v.iter_mut().for_each(|x| *x *= scale);
        }
        basis
    }
}

/// Draws the train and validation splits. Samples are interleaved by class
/// and then shuffled, all from `rng`.
pub fn make_synthetic(spec: &SynthTaskSpec, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let protos = spec.prototypes();
    let mut draw = |per_class: usize, split: Split| {
        let mut labels: Vec<usize> = (0..per_class * spec.num_classes)
            .map(|i| i % spec.num_classes)
            .collect();
        rng.shuffle(&mut labels);
        let mut tokens = Vec::with_capacity(labels.len() * spec.seq_len * spec.patch_dim);
        for &c in &labels {
            for _ in 0..spec.seq_len {
                for &p in &protos[c] {
                    tokens.push(p + spec.noise_std * rng.normal());
                }
            }
        }
        Dataset::new(tokens, labels, spec.seq_len, spec.patch_dim, spec.num_classes, split)
    };
    let train = draw(spec.train_per_class, Split::Train)?;
    let val = draw(spec.val_per_class, Split::Val)?;
    Ok((train, val))
}
