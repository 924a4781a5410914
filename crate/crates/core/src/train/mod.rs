//! Optimizer, training loop, evaluation metrics and checkpoints.

mod adam;
pub mod checkpoint;
mod fit;
mod metrics;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use fit::{fit, EpochRecord, FitResult, TrainConfig};
pub use metrics::{confusion_matrix, evaluate, ClassCounts, MetricsReport};
