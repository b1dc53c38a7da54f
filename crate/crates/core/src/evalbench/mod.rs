//! Accuracy/FLOPs sweeps over every stitch and their Pareto frontier.

mod pareto;
mod sweep;

pub use pareto::pareto_front;
pub use sweep::{
    anchor_accuracy, config_accuracy, emit_curve, sweep, SweepResult, SweepRow, EVAL_BATCH,
};
