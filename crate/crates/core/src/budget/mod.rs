//! FLOPs accounting and FLOPs-constrained sampling of stitches.
//!
//! Each config's FLOPs are rounded to a multiple of a step `t`; configs that
//! share a multiple form a bin. Resource-constrained sampling picks a bin
//! first and a config inside it second, so a config alone in its bin (such as
//! an anchor) is drawn far more often than under uniform sampling.

mod cost;
mod distribution;
mod report;

pub use cost::{backbone_flops, block_flops, AnchorCost, CostModel};
pub use distribution::{
    bin_key, build_distribution, uniform_sample, Bin, BudgetDistribution, Draw, Sampler,
};
pub use report::{write_distribution, write_distribution_csv};
