//! Translation by conditional generation, BLEU scoring, per-direction
//! evaluation tables and parameter accounting.

pub mod bleu;
pub mod matrix;
pub mod params;
pub mod translate;

pub use bleu::{bleu4, bleu4_with, BleuReport};
pub use matrix::{evaluate_matrix, BleuMatrix, MatrixConfig};
pub use params::{count_params, param_chart_svg, params_csv, Paradigm, ParamReport};
pub use translate::{translate, translate_ids, TranslationRequest};

use crate::corpus::CorpusError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{0} candidates but {1} references")]
    LengthMismatch(usize, usize),
    #[error("nothing to score")]
    EmptyCorpus,
    #[error("source and target are both language {0}")]
    SameLanguage(usize),
    #[error("unknown language {0}")]
    UnknownLanguage(usize),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl From<crate::tensor::TensorError> for EvalError {
    fn from(e: crate::tensor::TensorError) -> Self {
        EvalError::Model(ModelError::Tensor(e))
    }
}

pub type Result<T> = std::result::Result<T, EvalError>;
