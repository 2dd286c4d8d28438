//! Multi-string variational autoencoder with a hierarchical latent space.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decode;
pub mod gradcheck;
pub mod model;
pub mod train;

use thiserror::Error;

use crate::nn::NnError;
use crate::smiles::ParseError;
use crate::tensor::TensorError;

pub use config::{Ablations, HeadKind, HeadSpec, KlScaleMode, ModelConfig};
pub use data::{example_from_strings, prepare_example, DecoderBatch, EncodedString, EncoderBatch, Example, ModelVocab};
pub use decode::{
    beam_search, sample_report, BeamOptions, Decoded, LatentDecoder, LstmBeamState, SampleReport, StepModel,
};
pub use gradcheck::{end_to_end_grad_check, grad_check_suite};
pub use model::{EncoderOutput, Hierarchy, Layout, Model, RenormMode, TargetStats};
pub use train::{
    anneal_weight, corpus_vocab, draw_noise, fit_target_stats, train, write_metrics, Forward, LossParts, MetricsRow,
    TrainConfig, TrainItem, METRICS_HEADER,
};

#[derive(Debug, Error)]
pub enum VaeError {
    #[error("parse error: {0}")]
    Parse(ParseError),
    #[error("symbol {0} is not in the model vocabulary")]
    UnknownSymbol(String),
    #[error("string does not visit every atom of the molecule exactly once")]
    AlignmentMissing,
    #[error("decoded string does not match the molecule")]
    MoleculeMismatch,
    #[error("no target strings")]
    EmptyTargets,
    #[error("corpus is empty")]
    CorpusEmpty,
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(u64),
    #[error("decoding exceeded the maximum length")]
    MaxLengthExceeded,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
