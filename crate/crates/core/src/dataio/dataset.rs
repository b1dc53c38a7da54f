use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// Labeled samples of `seq_len × patch_dim` tokens, stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    tokens: Vec<f64>,
    labels: Vec<usize>,
    seq_len: usize,
    patch_dim: usize,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    /// `tokens` holds `labels.len()` samples of `seq_len · patch_dim` values.
    pub fn new(
        tokens: Vec<f64>,
        labels: Vec<usize>,
        seq_len: usize,
        patch_dim: usize,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if tokens.len() != labels.len() * seq_len * patch_dim {
            return Err(Error::shape(
                "dataset",
                format!(
                    "{} token values for {} samples of {seq_len}×{patch_dim}",
                    tokens.len(),
                    labels.len()
                ),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Index(format!("label {bad} with {num_classes} classes")));
        }
        Ok(Dataset {
            tokens,
            labels,
            seq_len,
            patch_dim,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Tokens of sample `i`, row-major `seq_len × patch_dim`.
    pub fn tokens(&self, i: usize) -> &[f64] {
        let n = self.seq_len * self.patch_dim;
        &self.tokens[i * n..(i + 1) * n]
    }

    /// Stacks the given samples into a `(len · seq_len) × patch_dim` matrix.
    pub fn batch(&self, indices: &[usize]) -> Result<(Matrix, Vec<usize>)> {
        let n = self.seq_len * self.patch_dim;
        let mut data = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Index(format!("sample {i} of {}", self.len())));
            }
            data.extend_from_slice(self.tokens(i));
            labels.push(self.labels[i]);
        }
        Ok((
            Matrix::from_vec(indices.len() * self.seq_len, self.patch_dim, data)?,
            labels,
        ))
    }

    /// Consecutive batches covering the whole set in order; the last may be short.
    pub fn chunks(&self, batch_size: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
        let size = batch_size.max(1);
        (0..self.len())
            .step_by(size)
            .map(move |s| (s..(s + size).min(self.len())).collect())
    }
}

/// Endless shuffled batches: each epoch is a fresh permutation drawn from
/// the batcher's own stream.
#[derive(Clone, Debug)]
pub struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl Batcher {
    pub fn new(len: usize, rng: Rng) -> Self {
        let mut b = Batcher {
            order: (0..len).collect(),
            pos: len,
            rng,
        };
        b.reshuffle();
        b
    }

    fn reshuffle(&mut self) {
        self.rng.shuffle(&mut self.order);
        self.pos = 0;
    }

    /// The next `size` sample indices, wrapping into a new epoch as needed.
    pub fn next_indices(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        if self.order.is_empty() {
            return out;
        }
        while out.len() < size {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}
