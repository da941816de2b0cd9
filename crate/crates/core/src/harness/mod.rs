//! Experiment orchestration: datasets, training, robustness sweeps, loss
//! landscapes, reports and the command-line front end.

pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod landscape;
pub mod seeds;
pub mod train;

pub use config::{fit, ExperimentConfig, FitOutput, KernelChoice};
pub use data::{load_dataset, Dataset, DatasetSource, Splits};
pub use eval::{
    evaluate, omniscient_eval, robustness_sweep, Evaluation, RobustnessRow, RobustnessTable, SweepConfig, Threat,
};
pub use landscape::{loss_landscape, LandscapeGrid};
pub use train::{accuracy, train, AdversarialTraining, EpochMetrics, TrainConfig};
