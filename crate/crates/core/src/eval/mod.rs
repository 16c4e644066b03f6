//! Evaluation protocol: metrics, repeated stratified splits and scarcity sweeps.

pub mod cv;
pub mod metrics;
pub mod sweep;

pub use cv::{run_cv, EvalReport, Evaluated, SplitPlan};
pub use metrics::MetricSet;
pub use sweep::{scarcity_sweep, Axis, SweepPoint};
