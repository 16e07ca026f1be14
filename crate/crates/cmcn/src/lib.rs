//! CMR motion artifact correction network: a residual encoder-decoder
//! generator, a global discriminator, content/edge/adversarial losses,
//! a deterministic training loop, checkpoints and inference.

pub mod checkpoint;
pub mod config;
mod infer;
pub mod loss;
pub mod model;
pub mod train;
pub mod verify;

use cmrlab_autodiff::AutodiffError;
use thiserror::Error;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{DiscriminatorConfig, GeneratorConfig, LossWeights, TrainConfig};
pub use infer::{correct, correct_with};
pub use model::{Discriminator, Generator};
pub use train::{load_pairs, smoothed, train, train_with, StepRecord, TrainOutcome, TrainPair};

#[derive(Debug, Error)]
pub enum CmcnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(
        "non-finite loss at step {step}: content {content}, edge {edge}, gan_g {gan_g}, d_loss {d_loss}"
    )]
    NonFinite {
        step: usize,
        content: f64,
        edge: f64,
        gan_g: f64,
        d_loss: f64,
    },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
