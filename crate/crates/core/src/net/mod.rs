//! Classifier network: a small autodiff engine, the Mobile-FaceNet style
//! model, Adam training, checkpoints and embedding extraction.

pub mod checkpoint;
pub mod embed;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

use thiserror::Error;

use crate::augment::AugmentError;
use crate::corpus::CorpusError;
use crate::dsp::DspError;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use embed::{embed_specs, extract_embeddings, Embedding, EmbeddingLayer};
pub use gradcheck::{gradient_check, LayerKind};
pub use model::{build_model, Model, ModelConfig, MIN_FRAMES};
pub use optim::{AdamConfig, AdamState};
pub use tensor::Tensor;
pub use train::{train, EpochStats, TrainConfig, TrainingLog};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("input has {got} frames; at least {min} are needed")]
    InputTooSmall { min: usize, got: usize },
    #[error("input shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),
    #[error("training loss diverged at epoch {epoch}, batch {batch}")]
    DivergedLoss { epoch: usize, batch: usize },
    #[error("no training examples")]
    EmptyDataset,
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
