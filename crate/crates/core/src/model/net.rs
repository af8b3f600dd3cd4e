//! Forward passes recorded on a tape.

use super::layout::{AttnIds, LnIds, MlpIds};
use super::{ModelError, ModelParams, Result};
use crate::corpus::vocab::{BOS, CLS, EOS, SEP};
use crate::gaussian::GaussianVar;
use crate::tensor::{Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;
const MASKED: f64 = -1e9;
/// Ids below this are specials and flags are placed right after them.
const N_SPECIALS: usize = 5;

/// Encoder output split at the flag/code boundary.
#[derive(Clone, Copy, Debug)]
pub struct Encoded<'t> {
    pub lang: usize,
    /// `[k, d]`
    pub flag: Var<'t>,
    /// `[c, d]`
    pub code: Var<'t>,
}

/// Posteriors and reconstructions of one multi-parallel pass.
#[derive(Clone, Debug)]
pub struct Interaction<'t> {
    /// `(lang, q_i)` per input language.
    pub specific: Vec<(usize, GaussianVar<'t>)>,
    /// Present when two or more languages are given.
    pub shared: Option<GaussianVar<'t>>,
    /// `(lang, r_i)` per input language.
    pub shift: Vec<(usize, GaussianVar<'t>)>,
    /// `(lang, x_hat)` for each requested target.
    pub recon: Vec<(usize, Var<'t>)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    /// 1 is greedy.
    pub beam: usize,
    /// Generated tokens, EOS excluded.
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { beam: 1, max_len: 40 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    /// Generated ids without BOS/EOS.
    pub ids: Vec<usize>,
    /// Length limit hit before EOS.
    pub truncated: bool,
}

/// Parameters bound to one tape.
pub struct Net<'t, 'p> {
    tape: &'t Tape,
    params: &'p ModelParams,
    vars: Vec<Var<'t>>,
}

impl<'t, 'p> Net<'t, 'p> {
    /// Binds every parameter; `trainable` registers them for gradients.
    pub fn new(tape: &'t Tape, params: &'p ModelParams, trainable: bool) -> Self {
        let vars = params
            .tensors()
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Net { tape, params, vars }
    }

    /// Uses caller-provided leaves, one per parameter in layout order.
    pub fn from_vars(tape: &'t Tape, params: &'p ModelParams, vars: Vec<Var<'t>>) -> Result<Self> {
        if vars.len() != params.len() {
            return Err(ModelError::DimMismatch(format!("{} variables for {} parameters", vars.len(), params.len())));
        }
        for (v, t) in vars.iter().zip(params.tensors()) {
            if v.shape() != t.shape() {
                return Err(ModelError::DimMismatch(format!("variable {:?} for parameter {:?}", v.shape(), t.shape())));
            }
        }
        Ok(Net { tape, params, vars })
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    /// Leaf variables in layout order.
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    fn v(&self, i: usize) -> Var<'t> {
        self.vars[i]
    }

    fn check_lang(&self, lang: usize) -> Result<()> {
        if lang >= self.params.dims().n_langs {
            return Err(ModelError::UnknownLanguage(lang));
        }
        Ok(())
    }

    fn affine(&self, x: &Var<'t>, w: usize, b: usize) -> Result<Var<'t>> {
        Ok(x.matmul(&self.v(w))?.add(&self.v(b))?)
    }

    fn ln(&self, x: &Var<'t>, ids: LnIds) -> Result<Var<'t>> {
        Ok(x.layer_norm(&self.v(ids.g), &self.v(ids.b), LN_EPS)?)
    }

    fn attention(&self, x: &Var<'t>, mem: &Var<'t>, a: AttnIds, causal: bool) -> Result<Var<'t>> {
        let d = self.params.dims().d_model;
        let heads = self.params.dims().heads;
        let dh = d / heads;
        let q = self.affine(x, a.wq, a.bq)?.scale(1.0 / (dh as f64).sqrt())?;
        let k = self.affine(mem, a.wk, a.bk)?;
        let v = self.affine(mem, a.wv, a.bv)?;
        let (n, m) = (x.shape()[0], mem.shape()[0]);
        let mask: Option<Vec<bool>> = causal.then(|| (0..n * m).map(|i| i % m > i / m).collect());
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (s, e) = (h * dh, (h + 1) * dh);
            let mut scores = q.slice(1, s, e)?.matmul_t(&k.slice(1, s, e)?)?;
            if let Some(mask) = &mask {
                scores = scores.masked_fill(mask, MASKED)?;
            }
            outs.push(scores.softmax(1)?.matmul(&v.slice(1, s, e)?)?);
        }
        let cat = if heads == 1 { outs[0] } else { Var::concat(&outs, 1)? };
        self.affine(&cat, a.wo, a.bo)
    }

    fn feed_forward(&self, x: &Var<'t>, f: MlpIds) -> Result<Var<'t>> {
        let h = self.affine(x, f.w1, f.b1)?.relu()?;
        self.affine(&h, f.w2, f.b2)
    }

    fn embed(&self, ids: &[usize]) -> Result<Var<'t>> {
        let dims = self.params.dims();
        if ids.len() > dims.max_len {
            return Err(ModelError::MalformedSequence(format!(
                "length {} exceeds max_len {}",
                ids.len(),
                dims.max_len
            )));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= dims.vocab) {
            return Err(ModelError::MalformedSequence(format!("token id {bad} outside vocabulary")));
        }
        let lay = self.params.layout();
        let tok = self.v(lay.tok_emb).embedding(ids)?;
        let pos = self.v(lay.pos_emb).slice(0, 0, ids.len())?;
        Ok(tok.add(&pos)?)
    }

    /// Runs the shared encoder over a flagged input sequence.
    pub fn encode(&self, ids: &[usize]) -> Result<Encoded<'t>> {
        let dims = self.params.dims();
        let k = dims.flag_len;
        if ids.len() < k + 2 || ids[0] != CLS || ids[ids.len() - 1] != SEP {
            return Err(ModelError::MalformedSequence("expected [CLS] flags code [SEP]".into()));
        }
        let first = ids[1];
        if first < N_SPECIALS || !(first - N_SPECIALS).is_multiple_of(k) {
            return Err(ModelError::MalformedSequence(format!("position 1 holds {first}, not a first flag token")));
        }
        let lang = (first - N_SPECIALS) / k;
        self.check_lang(lang)?;
        if (0..k).any(|j| ids[1 + j] != first + j) {
            return Err(ModelError::MalformedSequence("flag tokens out of order".into()));
        }
        let lay = self.params.layout();
        let mut x = self.embed(ids)?;
        for l in &lay.enc {
            let h = self.ln(&x, l.ln1)?;
            x = x.add(&self.attention(&h, &h, l.attn, false)?)?;
            let h = self.ln(&x, l.ln2)?;
            x = x.add(&self.feed_forward(&h, l.ff)?)?;
        }
        let x = self.ln(&x, lay.enc_ln)?;
        let flag = x.slice(0, 1, 1 + k)?;
        let code = x.slice(0, 1 + k, ids.len() - 1)?;
        Ok(Encoded { lang, flag, code })
    }

    fn mlp_tanh(&self, x: &Var<'t>, m: MlpIds) -> Result<Var<'t>> {
        let h = self.affine(x, m.w1, m.b1)?.tanh()?;
        self.affine(&h, m.w2, m.b2)
    }

    fn flat_flag(&self, flag: &Var<'t>) -> Result<Var<'t>> {
        let dims = self.params.dims();
        let want = [dims.flag_len, dims.d_model];
        if flag.shape() != want {
            return Err(ModelError::DimMismatch(format!("flag block {:?}, expected {want:?}", flag.shape())));
        }
        Ok(flag.reshape([1, dims.flag_len * dims.d_model])?)
    }

    fn gaussian_head(&self, x: &Var<'t>, m: MlpIds) -> Result<GaussianVar<'t>> {
        let z = self.params.dims().latent;
        let out = self.mlp_tanh(x, m)?.reshape([2 * z])?;
        Ok(GaussianVar::new(out.slice(0, 0, z)?, out.slice(0, z, 2 * z)?)?)
    }

    /// Language-specific posterior `q_i(z_i | x_i)`.
    pub fn infer_specific(&self, flag: &Var<'t>, lang: usize) -> Result<GaussianVar<'t>> {
        self.check_lang(lang)?;
        let x = self.flat_flag(flag)?;
        self.gaussian_head(&x, self.params.layout().q_specific[lang])
    }

    /// Shift-shared posterior `r_i(z_s | x_i)`.
    pub fn infer_shift(&self, flag: &Var<'t>, lang: usize) -> Result<GaussianVar<'t>> {
        self.check_lang(lang)?;
        let x = self.flat_flag(flag)?;
        self.gaussian_head(&x, self.params.layout().r_shift[lang])
    }

    /// Shared posterior over the mean of the flag blocks. Blocks are pooled
    /// in language-id order, so the result does not depend on input order.
    pub fn infer_shared(&self, flags: &[(usize, Var<'t>)]) -> Result<GaussianVar<'t>> {
        if flags.len() < 2 {
            return Err(ModelError::TooFewLanguages(flags.len()));
        }
        let mut sorted: Vec<(usize, Var<'t>)> = flags.to_vec();
        sorted.sort_by_key(|(l, _)| *l);
        if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(ModelError::DimMismatch("language given twice to the shared posterior".into()));
        }
        let rows = sorted
            .iter()
            .map(|(l, f)| {
                self.check_lang(*l)?;
                self.flat_flag(f)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = self.params.dims().flag_len * self.params.dims().d_model;
        let pooled = Var::concat(&rows, 0)?.mean(0)?.reshape([1, n])?;
        self.gaussian_head(&pooled, self.params.layout().q_shared)
    }

    /// `p_i(x_i | z_i, z_s)`: a `[k, d]` flag block from the two latents.
    pub fn reconstruct_flag(&self, z_specific: &Var<'t>, z_shared: &Var<'t>, lang: usize) -> Result<Var<'t>> {
        self.check_lang(lang)?;
        let dims = self.params.dims();
        let z = dims.latent;
        if z_specific.shape() != [z] || z_shared.shape() != [z] {
            return Err(ModelError::DimMismatch(format!(
                "latents {:?} and {:?}, expected [{z}]",
                z_specific.shape(),
                z_shared.shape()
            )));
        }
        let input = Var::concat(&[*z_specific, *z_shared], 0)?.reshape([1, 2 * z])?;
        let out = self.mlp_tanh(&input, self.params.layout().recon[lang])?;
        Ok(out.reshape([dims.flag_len, dims.d_model])?)
    }

    /// Posteriors for every given flag block, then reconstructions of
    /// `targets` from posterior samples. `noise` supplies one standard normal
    /// vector per draw.
    pub fn interact(
        &self,
        flags: &[(usize, Var<'t>)],
        targets: &[usize],
        noise: &mut dyn FnMut() -> Vec<f64>,
    ) -> Result<Interaction<'t>> {
        let specific = flags.iter().map(|(l, f)| Ok((*l, self.infer_specific(f, *l)?))).collect::<Result<Vec<_>>>()?;
        let shift = flags.iter().map(|(l, f)| Ok((*l, self.infer_shift(f, *l)?))).collect::<Result<Vec<_>>>()?;
        let shared = if flags.len() >= 2 { Some(self.infer_shared(flags)?) } else { None };
        let mut recon = Vec::with_capacity(targets.len());
        for &t in targets {
            let q = &specific
                .iter()
                .find(|(l, _)| *l == t)
                .ok_or_else(|| ModelError::DimMismatch(format!("target {t} has no flag block")))?
                .1;
            let zs = match &shared {
                Some(s) => s,
                None => &shift.iter().find(|(l, _)| *l == t).expect("shift per flag").1,
            };
            let z_t = q.reparameterize(&noise())?;
            let z_s = zs.reparameterize(&noise())?;
            recon.push((t, self.reconstruct_flag(&z_t, &z_s, t)?));
        }
        Ok(Interaction { specific, shared, shift, recon })
    }

    /// Decoder memory: the target flag block followed by the source code rows.
    pub fn memory(&self, flag_hat: &Var<'t>, code: &Var<'t>) -> Result<Var<'t>> {
        Ok(Var::concat(&[*flag_hat, *code], 0)?)
    }

    /// Teacher-forced logits `[len(input), vocab]` of decoder `lang`.
    pub fn decode_logits(&self, memory: &Var<'t>, lang: usize, input: &[usize]) -> Result<Var<'t>> {
        self.check_lang(lang)?;
        if input.is_empty() {
            return Err(ModelError::MalformedSequence("empty decoder input".into()));
        }
        let lay = self.params.layout();
        let dec = &lay.dec[lang];
        let mut x = self.embed(input)?;
        for l in &dec.layers {
            let h = self.ln(&x, l.ln1)?;
            x = x.add(&self.attention(&h, &h, l.self_attn, true)?)?;
            let h = self.ln(&x, l.ln2)?;
            x = x.add(&self.attention(&h, memory, l.cross, false)?)?;
            let h = self.ln(&x, l.ln3)?;
            x = x.add(&self.feed_forward(&h, l.ff)?)?;
        }
        let x = self.ln(&x, dec.ln_f)?;
        Ok(x.matmul_t(&self.v(lay.tok_emb))?.add(&self.v(dec.out_bias))?)
    }

    /// Mean token cross-entropy of `target` (EOS appended) under teacher forcing.
    pub fn teacher_ce(&self, memory: &Var<'t>, lang: usize, target: &[usize]) -> Result<Var<'t>> {
        let mut input = Vec::with_capacity(target.len() + 1);
        input.push(BOS);
        input.extend_from_slice(target);
        let mut gold = target.to_vec();
        gold.push(EOS);
        let logits = self.decode_logits(memory, lang, &input)?;
        Ok(logits.log_softmax(1)?.gather_rows(&gold)?.mean_all()?.scale(-1.0)?)
    }
}

/// Ids the decoder may emit: EOS and code tokens.
fn emittable(vocab: usize, n_langs: usize, k: usize) -> impl Fn(usize) -> bool {
    let first_code = N_SPECIALS + n_langs * k;
    move |i| i == EOS || (i >= first_code && i < vocab)
}

/// Last-position log-probabilities after `prefix`, restricted to emittable ids.
fn next_log_probs(params: &ModelParams, memory: &Tensor, lang: usize, prefix: &[usize]) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let net = Net::new(&tape, params, false);
    let mem = tape.constant(memory.clone());
    let logits = net.decode_logits(&mem, lang, prefix)?;
    let n = prefix.len();
    let row = logits.slice(0, n - 1, n)?;
    let dims = params.dims();
    let ok = emittable(dims.vocab, dims.n_langs, dims.flag_len);
    let mask: Vec<bool> = (0..dims.vocab).map(|i| !ok(i)).collect();
    Ok(row.masked_fill(&mask, MASKED)?.log_softmax(1)?.to_vec())
}

/// Greedy (beam 1) or beam-search generation from a fixed memory.
pub fn generate(params: &ModelParams, memory: &Tensor, lang: usize, cfg: &DecodeConfig) -> Result<Generated> {
    let dims = params.dims();
    if lang >= dims.n_langs {
        return Err(ModelError::UnknownLanguage(lang));
    }
    let max_len = cfg.max_len.min(dims.max_len - 1);
    let beam = cfg.beam.max(1);
    // (prefix including BOS, score, finished)
    let mut hyps: Vec<(Vec<usize>, f64, bool)> = vec![(vec![BOS], 0.0, false)];
    for _ in 0..max_len {
        if hyps.iter().all(|h| h.2) {
            break;
        }
        let mut cand: Vec<(Vec<usize>, f64, bool)> = Vec::new();
        for (prefix, score, done) in &hyps {
            if *done {
                cand.push((prefix.clone(), *score, true));
                continue;
            }
            let lp = next_log_probs(params, memory, lang, prefix)?;
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|a, b| lp[*b].total_cmp(&lp[*a]).then(a.cmp(b)));
            for &tok in order.iter().take(beam) {
                let mut p = prefix.clone();
                p.push(tok);
                cand.push((p, score + lp[tok], tok == EOS));
            }
        }
        cand.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        cand.truncate(beam);
        hyps = cand;
    }
    let best =
        hyps.iter().max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0))).expect("at least one hypothesis");
    let finished = best.2;
    let ids: Vec<usize> = best.0[1..].iter().copied().take_while(|&t| t != EOS).collect();
    Ok(Generated { ids, truncated: !finished })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::encode_input;
    use crate::corpus::Vocab;
    use crate::model::ModelDims;

    fn setup() -> (ModelParams, Vocab) {
        let vocab = Vocab::new(3, 2, ["a", "b", "c", "d"]).unwrap();
        let p = ModelParams::init(&ModelDims::micro(vocab.len(), 3), 9).unwrap();
        (p, vocab)
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn encode_splits_flag_and_code() {
        let (p, v) = setup();
        let tape = Tape::new();
        let net = Net::new(&tape, &p, false);
        let e = net.encode(&encode_input(&v, &toks("a b c"), 1, 2).unwrap()).unwrap();
        assert_eq!(e.lang, 1);
        assert_eq!(e.flag.shape(), vec![2, 8]);
        assert_eq!(e.code.shape(), vec![3, 8]);
        let e0 = net.encode(&encode_input(&v, &[], 0, 2).unwrap()).unwrap();
        assert_eq!(e0.code.shape(), vec![0, 8]);
        assert!(net.encode(&[CLS, 9, 1]).is_err());
    }

    #[test]
    fn shared_posterior_ignores_language_order() {
        let (p, v) = setup();
        let tape = Tape::new();
        let net = Net::new(&tape, &p, false);
        let flags: Vec<(usize, Var)> =
            (0..3).map(|l| (l, net.encode(&encode_input(&v, &toks("a b"), l, 2).unwrap()).unwrap().flag)).collect();
        let a = net.infer_shared(&flags).unwrap().to_value();
        let b = net.infer_shared(&[flags[2], flags[0], flags[1]]).unwrap().to_value();
        assert_eq!(a, b);
        assert!(matches!(net.infer_shared(&flags[..1]), Err(ModelError::TooFewLanguages(1))));
    }

    #[test]
    fn generation_terminates_inside_vocabulary() {
        let (p, v) = setup();
        let tape = Tape::new();
        let net = Net::new(&tape, &p, false);
        let e = net.encode(&encode_input(&v, &toks("a b"), 0, 2).unwrap()).unwrap();
        let mem = Var::concat(&[e.flag, e.code], 0).unwrap().value();
        for beam in [1, 3] {
            let cfg = DecodeConfig { beam, max_len: 10 };
            let g = generate(&p, &mem, 1, &cfg).unwrap();
            assert!(g.ids.len() <= 10);
            assert!(g.ids.iter().all(|&i| v.is_code(i)));
            assert_eq!(generate(&p, &mem, 1, &cfg).unwrap(), g);
        }
    }
}
