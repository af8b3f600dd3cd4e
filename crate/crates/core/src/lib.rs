//! Multilingual program translation with disentangled variational latents.

pub mod config;
pub mod corpus;
pub mod diagnostics;
pub mod gaussian;
pub mod infolab;
pub mod model;
pub mod seed;
pub mod tensor;
pub mod train;
pub mod translate_eval;
