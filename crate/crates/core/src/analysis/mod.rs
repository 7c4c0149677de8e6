//! Task metrics, evaluation harnesses and mutual-information analysis.

pub mod eval;
pub mod metrics;
pub mod mi;

pub use eval::{ablation_suite, generalization_suite, mi_suite, run_eval, EvalReport};
pub use metrics::{cabinet_score, episode_metric, latch_score, pour_metric};
pub use mi::{estimate_mi, MiReport};
