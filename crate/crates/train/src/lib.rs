//! Toy-scale denoiser and noise-estimator networks trained jointly with the
//! adaptive re-visible objective on masked volumes.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod denoiser;
pub mod error;
pub mod estimator;
pub mod layers;
pub mod run;
pub mod step;

pub use config::{Objective, Scheme, TrainConfig};
pub use denoiser::{infer, DenoiserNet};
pub use error::{TrainError, TrainResult};
pub use estimator::EstimatorNet;
pub use run::{run_training, train_on_images, EpochMetrics, TrainingOutcome};
pub use step::{train_step, Nets, StepLosses};
