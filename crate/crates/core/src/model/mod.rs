//! Network definition, training, reverse reconstruction, snapshots and image dumps.

pub mod dump;
pub mod network;
pub mod reverse;
pub mod snapshot;
pub mod train;

pub use network::{fixed_noise, Architecture, Forward, Losses, Table2ImageModel, Variant};
pub use reverse::{train_reverse, ReverseConfig, ReverseReconstructor};
pub use train::{fit, fit_run, EpochMetrics, FitReport, NoisePolicy, RunResult, TrainConfig};
