//! Shared encoder, per-language decoders and the latent projectors.

pub mod checkpoint;
pub mod layout;
pub mod net;
pub mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use layout::{Component, Layout};
pub use net::{DecodeConfig, Encoded, Generated, Interaction, Net};
pub use params::ModelParams;

use serde::{Deserialize, Serialize};

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("malformed sequence: {0}")]
    MalformedSequence(String),
    #[error("shared posterior needs at least two languages, got {0}")]
    TooFewLanguages(usize),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("unknown language id {0}")]
    UnknownLanguage(usize),
    #[error("invalid dims: {0}")]
    InvalidDims(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_model: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub enc_ff: usize,
    pub dec_ff: usize,
    pub latent: usize,
    /// Flag tokens per language.
    pub flag_len: usize,
    pub proj_hidden: usize,
    pub vocab: usize,
    pub max_len: usize,
    pub n_langs: usize,
}

impl ModelDims {
    /// CPU-sized defaults.
    pub fn desk(vocab: usize, n_langs: usize) -> Self {
        ModelDims {
            d_model: 64,
            heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            enc_ff: 128,
            dec_ff: 128,
            latent: 32,
            flag_len: 4,
            proj_hidden: 64,
            vocab,
            max_len: 128,
            n_langs,
        }
    }

    /// 12-layer 768-wide encoder with a RoBERTa-sized vocabulary and
    /// 6-layer decoders.
    pub fn paper(n_langs: usize) -> Self {
        ModelDims {
            d_model: 768,
            heads: 12,
            enc_layers: 12,
            dec_layers: 6,
            enc_ff: 3072,
            dec_ff: 2048,
            latent: 32,
            flag_len: 16,
            proj_hidden: 64,
            vocab: 50265,
            max_len: 514,
            n_langs,
        }
    }

    /// Tiny dims for gradient checks.
    pub fn micro(vocab: usize, n_langs: usize) -> Self {
        ModelDims {
            d_model: 8,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            enc_ff: 8,
            dec_ff: 8,
            latent: 3,
            flag_len: 2,
            proj_hidden: 4,
            vocab,
            max_len: 32,
            n_langs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::InvalidDims(m.to_string()));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.latent == 0 || self.flag_len == 0 || self.proj_hidden == 0 || self.vocab < 6 {
            return bad("latent, flag_len and proj_hidden must be positive and vocab at least 6");
        }
        if self.n_langs == 0 || self.max_len < self.flag_len + 2 {
            return bad("need a language and max_len >= flag_len + 2");
        }
        if self.enc_ff == 0 || self.dec_ff == 0 {
            return bad("feed-forward widths must be positive");
        }
        Ok(())
    }

    pub(crate) fn emb_std(&self) -> f64 {
        1.0 / (self.d_model as f64).sqrt()
    }
}
