use std::collections::BTreeMap;

use crate::anchors::{AnchorGrads, AnchorModel};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Matrix,
    v: Matrix,
    steps: i32,
}

/// AdamW with per-tensor moments keyed by name. A tensor gets state on its
/// first step, so tensors that are never stepped carry none; bias
/// correction counts each tensor's own steps.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    state: BTreeMap<String, Moments>,
}

/// Whether weight decay applies to `name`: weight matrices and stitching
/// factors do, biases and norm parameters do not.
pub fn decays(name: &str) -> bool {
    name.ends_with(".weight") || name.ends_with(".M") || name.ends_with(".A") || name.ends_with(".B")
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            state: BTreeMap::new(),
        }
    }

    pub fn with_weight_decay(weight_decay: f64) -> Self {
        AdamW::new(AdamWConfig {
            weight_decay,
            ..AdamWConfig::default()
        })
    }

    pub fn has_state(&self, name: &str) -> bool {
        self.state.contains_key(name)
    }

    pub fn state_names(&self) -> impl Iterator<Item = &str> {
        self.state.keys().map(String::as_str)
    }

    /// Number of steps taken on `name`.
    pub fn steps(&self, name: &str) -> usize {
        self.state.get(name).map_or(0, |s| s.steps as usize)
    }

    /// One update of `param` with gradient `grad` at learning rate `lr`.
    pub fn step(&mut self, name: &str, param: &mut Matrix, grad: &Matrix, lr: f64) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::shape(
                "optimizer step",
                format!("{name}: parameter {:?} vs gradient {:?}", param.shape(), grad.shape()),
            ));
        }
        let c = self.config;
        let st = self.state.entry(name.to_string()).or_insert_with(|| Moments {
            m: Matrix::zeros(param.rows(), param.cols()),
            v: Matrix::zeros(param.rows(), param.cols()),
            steps: 0,
        });
        if st.m.shape() != param.shape() {
            return Err(Error::shape(
                "optimizer step",
                format!("{name}: state {:?} vs parameter {:?}", st.m.shape(), param.shape()),
            ));
        }
        st.steps += 1;
        let bc1 = 1.0 - c.beta1.powi(st.steps);
        let bc2 = 1.0 - c.beta2.powi(st.steps);
        let wd = if decays(name) { c.weight_decay } else { 0.0 };
        let (m, v) = (st.m.data_mut(), st.v.data_mut());
        for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *p -= lr * wd * *p;
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
        }
        Ok(())
    }

    /// Steps every tensor of `model` that has an entry in `grads`; state keys
    /// are the checkpoint names behind `prefix`.
    pub fn step_anchor(&mut self, prefix: &str, model: &mut AnchorModel, grads: &AnchorGrads, lr: f64) -> Result<()> {
        let named: BTreeMap<String, &Matrix> = grads.named().into_iter().collect();
        if named.is_empty() {
            return Ok(());
        }
        for (name, param) in model.named_tensors_mut() {
            if let Some(g) = named.get(&name) {
                self.step(&format!("{prefix}{name}"), param, g, lr)?;
            }
        }
        Ok(())
    }
}
