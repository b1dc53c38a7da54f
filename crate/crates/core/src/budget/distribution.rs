use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::budget::CostModel;
use crate::error::{Error, Result};
use crate::linalg::Rng;
use crate::stitching::StitchSpace;

/// One discretized FLOPs level and the configs that round to it.
#[derive(Clone, Debug, PartialEq)]
pub struct Bin {
    /// `τ0 = key · step`.
    pub key: i64,
    /// Config ids in ascending order.
    pub members: Vec<usize>,
}

/// Categorical distribution `π(τ0) = #(τ = τ0) / E` over FLOPs bins.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetDistribution {
    step: f64,
    bins: Vec<Bin>,
    bin_of: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    /// Every config equally likely.
    Uniform,
    /// Uniform over occupied bins, then uniform within the bin.
    Ros,
}

impl std::str::FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Sampler::Uniform),
            "ros" => Ok(Sampler::Ros),
            _ => Err(Error::Config(format!("unknown sampler {s:?} (uniform, ros)"))),
        }
    }
}

/// A sampled stitch and the bin it belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Draw {
    pub bin: usize,
    pub config_id: usize,
}

/// Bin index of `flops` for step `t`: the nearest integer to `flops / t`,
/// halves rounding up.
pub fn bin_key(flops: f64, step: f64) -> i64 {
    (flops / step + 0.5).floor() as i64
}

impl BudgetDistribution {
    /// Bins configs by their FLOPs; `flops[i]` belongs to config `i`.
    pub fn from_flops(flops: &[f64], step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Config(format!("budget step must be positive, got {step}")));
        }
        if flops.is_empty() {
            return Err(Error::Config("cannot build a distribution over zero configs".into()));
        }
        if let Some((i, f)) = flops.iter().enumerate().find(|(_, f)| !f.is_finite()) {
            return Err(Error::Numerical(format!("config {i} has FLOPs {f}")));
        }
        let mut by_key: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, &f) in flops.iter().enumerate() {
            by_key.entry(bin_key(f, step)).or_default().push(i);
        }
        let bins: Vec<Bin> = by_key
            .into_iter()
            .map(|(key, members)| Bin { key, members })
            .collect();
        let mut bin_of = vec![0; flops.len()];
        for (b, bin) in bins.iter().enumerate() {
            for &m in &bin.members {
                bin_of[m] = b;
            }
        }
        Ok(BudgetDistribution { step, bins, bin_of })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Occupied bins in ascending FLOPs order.
    pub fn bins(&self) -> &[Bin] {
        &self.bins
    }

    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    /// Number of configs `E`.
    pub fn total(&self) -> usize {
        self.bin_of.len()
    }

    pub fn tau0(&self, bin: usize) -> f64 {
        self.bins[bin].key as f64 * self.step
    }

    /// Index of the bin holding `config_id`.
    pub fn bin_of(&self, config_id: usize) -> Result<usize> {
        self.bin_of
            .get(config_id)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("config {config_id} not in distribution")))
    }

    /// `π(τ0)` of bin `bin`.
    pub fn probability(&self, bin: usize) -> Ratio<u64> {
        Ratio::new(self.bins[bin].members.len() as u64, self.total() as u64)
    }

    /// Probability that `sampler` draws `config_id`.
    pub fn config_probability(&self, sampler: Sampler, config_id: usize) -> Result<Ratio<u64>> {
        let bin = self.bin_of(config_id)?;
        Ok(match sampler {
            Sampler::Uniform => Ratio::new(1, self.total() as u64),
            Sampler::Ros => Ratio::new(
                1,
                (self.num_bins() * self.bins[bin].members.len()) as u64,
            ),
        })
    }

    /// Two-stage draw: a bin uniformly among occupied bins, then a member.
    pub fn ros_sample(&self, rng: &mut Rng) -> Draw {
        let bin = rng.below(self.bins.len());
        let members = &self.bins[bin].members;
        Draw {
            bin,
            config_id: members[rng.below(members.len())],
        }
    }

    /// A config uniformly among all `E`.
    pub fn uniform_sample(&self, rng: &mut Rng) -> Draw {
        let config_id = uniform_sample(self.total(), rng);
        Draw {
            bin: self.bin_of[config_id],
            config_id,
        }
    }

    pub fn sample(&self, sampler: Sampler, rng: &mut Rng) -> Draw {
        match sampler {
            Sampler::Uniform => self.uniform_sample(rng),
            Sampler::Ros => self.ros_sample(rng),
        }
    }
}

/// Uniform draw over `count` configs.
pub fn uniform_sample(count: usize, rng: &mut Rng) -> usize {
    rng.below(count)
}

/// Distribution of every config in `space` under `cost`.
pub fn build_distribution(space: &StitchSpace, cost: &CostModel, step: f64) -> Result<BudgetDistribution> {
    BudgetDistribution::from_flops(&cost.space_flops(space), step)
}
