use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{EvalError, Result};
use crate::corpus::{encode_input, Vocab};
use crate::model::net::generate;
use crate::model::{DecodeConfig, ModelParams, Net};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TranslationRequest {
    pub source: Vec<String>,
    pub src: usize,
    pub tgt: usize,
    pub decode: DecodeConfig,
    /// `None` uses the prior mean for the target latent; otherwise it is
    /// drawn from the prior with this seed.
    pub sample_seed: Option<u64>,
}

impl TranslationRequest {
    pub fn deterministic(source: Vec<String>, src: usize, tgt: usize, decode: DecodeConfig) -> Self {
        TranslationRequest { source, src, tgt, decode, sample_seed: None }
    }
}

/// Translates already-encoded input ids (flags included) to target ids.
pub fn translate_ids(
    params: &ModelParams,
    input: &[usize],
    src: usize,
    tgt: usize,
    decode: &DecodeConfig,
    sample_seed: Option<u64>,
) -> Result<Vec<usize>> {
    let n = params.dims().n_langs;
    for l in [src, tgt] {
        if l >= n {
            return Err(EvalError::UnknownLanguage(l));
        }
    }
    if src == tgt {
        return Err(EvalError::SameLanguage(src));
    }
    if decode.max_len == 0 {
        return Err(EvalError::Config("max_len must be at least 1".into()));
    }
    let latent = params.dims().latent;
    let tape = Tape::new();
    let net = Net::new(&tape, params, false);
    let enc = net.encode(input)?;
    // the full parallel set is unavailable, so z_s comes from the source alone
    let z_s = net.infer_shift(&enc.flag, src)?.mean;
    let z_t = match sample_seed {
        None => vec![0.0; latent],
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..latent).map(|_| StandardNormal.sample(&mut rng)).collect()
        }
    };
    let z_t = tape.constant(Tensor::new(vec![latent], z_t)?);
    let flag_hat = net.reconstruct_flag(&z_t, &z_s, tgt)?;
    let memory = net.memory(&flag_hat, &enc.code)?.value();
    Ok(generate(params, &memory, tgt, decode)?.ids)
}

/// Target-language tokens for `req`.
pub fn translate(params: &ModelParams, vocab: &Vocab, req: &TranslationRequest) -> Result<Vec<String>> {
    if req.src >= vocab.n_langs() {
        return Err(EvalError::UnknownLanguage(req.src));
    }
    let input = encode_input(vocab, &req.source, req.src, params.dims().flag_len)?;
    let ids = translate_ids(params, &input, req.src, req.tgt, &req.decode, req.sample_seed)?;
    Ok(vocab.decode(&ids))
}
