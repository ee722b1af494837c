//! Experiment protocol: training with early stopping, balanced accuracy and
//! repeated paired runs.

pub mod metrics;
pub mod report;
pub mod train;

pub use metrics::{balanced_accuracy, early_stopping_check, Decision, EarlyStopping};
pub use report::{EpochLog, ExperimentReport, ModelReport, RunEntry};
pub use train::{evaluate, run_experiment, train_one, Arm, SealedSplit, SplitData, TrainConfig, TrainOutcome};
