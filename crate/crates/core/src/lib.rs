//! Poisson-Gaussian noise modeling, variance-stabilized noise estimation and
//! the adaptive re-visible self-supervised denoising objective.

pub mod cramer;
pub mod error;
pub mod estimate;
pub mod io;
pub mod masking;
pub mod metrics;
pub mod noise;
pub mod revisible;
pub mod rng;
pub mod scene;
pub mod tensor;
pub mod variance;

pub use error::{Error, Result};
pub use noise::{NoiseParams, PgLevel};
pub use rng::SeededRng;
pub use tensor::ImageTensor;
