//! Evaluation: set-distance metrics, synthetic multi-domain data and
//! comparisons against the random and global k-center baselines.

mod compare;
mod metrics;
mod synth;

pub use compare::{
    compare_methods, summarize, sweep, write_csv, CompareConfig, EvalReport, Method, MethodSummary,
    Stat,
};
pub use metrics::{centroid_proximity, diversity_metric, id_tpr, proximity_metric};
pub use synth::{generate_synthetic, SynthSpec};
