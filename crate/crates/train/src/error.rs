use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] pgden_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {term} at step {step}")]
    NonFinite { term: &'static str, step: u64 },
    #[error("no images found in {}", .0.display())]
    EmptyDataset(PathBuf),
    #[error("image {index} is {height}x{width}, smaller than the {patch}px training patch")]
    ImageTooSmall {
        index: usize,
        height: usize,
        width: usize,
        patch: usize,
    },
    #[error("images disagree on channel count: {0} vs {1}")]
    MixedChannels(usize, usize),
    #[error("checkpoint {}: {reason}", .path.display())]
    Checkpoint { path: PathBuf, reason: String },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type TrainResult<T> = std::result::Result<T, TrainError>;
