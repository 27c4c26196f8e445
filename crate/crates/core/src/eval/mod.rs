//! Metrics, the benchmark harness and the attribution stability studies.

pub mod bench;
pub mod metrics;
pub mod stability;

pub use bench::{benchmark_run, config_hash, default_arms, Arm, BenchCase, BenchReport, Prepared, RunReport};
pub use metrics::{accuracy, argmax, auc, binary_auc};
pub use stability::{mean_std, shuffle_consistency, stability_study, unpermute, AttributionSet, MethodScores, StabilityReport};
