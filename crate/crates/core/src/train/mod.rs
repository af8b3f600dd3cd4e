//! Multi-parallel objective, partially-missing training and the optimizer loop.

pub mod breakdown;
pub mod loss;
pub mod optim;
pub mod runner;

pub use breakdown::LossBreakdown;
pub use loss::{
    loss_and_grads, loss_multi_parallel, multi_parallel_objective, partial_objective, step_partially_missing,
    Evaluated, LossConfig, PreparedCorpus, PreparedInstance, PreparedSample, SourceMode,
};
pub use optim::{AdamW, AdamWConfig};
pub use runner::{metrics_csv, train, train_from, EpochMetrics, TrainConfig, TrainMode, TrainOutcome, METRICS_HEADER};

use crate::corpus::CorpusError;
use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("language {0} is absent from the sample")]
    MissingInstance(usize),
    #[error("no pseudo instance available for language {0}")]
    EmptyPool(usize),
    #[error("every language is present; use the multi-parallel loss")]
    AllPresent,
    #[error("sample has no present language")]
    NonePresent,
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(ModelError::Tensor(e))
    }
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;
