//! Adversarially regularised graph autoencoder.
//!
//! The encoder stacks graph convolutions, gated attention pooling and one
//! latent head per ensemble member. The decoder reconstructs dense `A`, `X`
//! and `E` for a fixed maximum order. Latent codes are pulled onto their
//! manifolds either by a learned discriminator against a push-forward prior
//! or by the parameter-free membership score.

mod batch;
mod checkpoint;
mod model;
mod params;
pub mod tape;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryError;

pub use batch::{GraphBatch, Propagation, Targets};
pub use checkpoint::{load_model, save_model, ModelCheckpoint, MODEL_FORMAT, MODEL_VERSION};
pub use model::{
    geometric_membership, reconstruction_loss, Autoencoder, Embedding, EncoderConfig, ModelConfig, Reconstruction,
    RunningStats, PROB_EPS,
};
pub use params::{gradient_check, Adam, AdamConfig, Group, Param, ParamId, ParamStore};
pub use train::{adversarial_step, train, EpochRecord, History, StepLosses, TrainConfig, Trainer};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged at step {step}: {what} is not finite")]
    Divergence { step: usize, what: &'static str },
    #[error("graph {index}: {source}")]
    Projection {
        index: usize,
        #[source]
        source: GeometryError,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvKind {
    /// Edge-conditioned convolution with a kernel-generating network.
    #[serde(rename = "ecc")]
    EdgeConditioned,
    /// Convolution with one shared kernel and symmetric normalisation.
    #[serde(rename = "gcn")]
    NodeOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscriminatorKind {
    /// Learned discriminator against samples from the push-forward prior.
    #[serde(rename = "prior")]
    Probabilistic,
    /// Parameter-free membership score.
    #[serde(rename = "geom")]
    Geometric,
}
