use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{LossBreakdown, Result, TrainError};
use crate::corpus::{encode_input, MultiParallelSample, SemiParallelCorpus, Vocab};
use crate::model::{Encoded, ModelParams, Net};
use crate::tensor::{Tape, Tensor, Var};

/// Which source programs condition each target's cross-entropy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceMode {
    /// Average over every other available language.
    All,
    /// One uniformly drawn source per target.
    SampleOne,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub mse_weight: f64,
    pub sources: SourceMode,
    /// Run the partially-missing inner loop over all languages, pseudo
    /// filled ones included, instead of present languages only.
    pub inner_all: bool,
    /// Stop gradients into the encoder flag block used as the
    /// reconstruction target.
    pub detach_target: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 1e-3, mse_weight: 1.0, sources: SourceMode::All, inner_all: false, detach_target: true }
    }
}

/// Encoder input and decoder target ids of one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedInstance {
    pub input: Vec<usize>,
    pub target: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub entries: Vec<Option<PreparedInstance>>,
}

impl PreparedSample {
    pub fn new(s: &MultiParallelSample, vocab: &Vocab, k: usize) -> Result<Self> {
        let entries = s
            .entries
            .iter()
            .enumerate()
            .map(|(l, e)| {
                e.as_ref()
                    .map(|toks| {
                        Ok(PreparedInstance { input: encode_input(vocab, toks, l, k)?, target: vocab.ids(toks)? })
                    })
                    .transpose()
            })
            .collect::<Result<_>>()?;
        Ok(PreparedSample { entries })
    }

    pub fn n_langs(&self) -> usize {
        self.entries.len()
    }

    pub fn present(&self) -> Vec<usize> {
        (0..self.entries.len()).filter(|&l| self.entries[l].is_some()).collect()
    }

    fn instance(&self, l: usize) -> Result<&PreparedInstance> {
        self.entries[l].as_ref().ok_or(TrainError::MissingInstance(l))
    }
}

/// Token ids of a whole corpus plus per-language instance lists.
#[derive(Clone, Debug)]
pub struct PreparedCorpus {
    pub samples: Vec<PreparedSample>,
    by_lang: Vec<Vec<usize>>,
}

impl PreparedCorpus {
    pub fn new(c: &SemiParallelCorpus, k: usize) -> Result<Self> {
        let samples: Vec<PreparedSample> =
            c.samples.iter().map(|s| PreparedSample::new(s, &c.vocab, k)).collect::<Result<_>>()?;
        Ok(Self::from_samples(samples, c.n_langs()))
    }

    pub fn from_samples(samples: Vec<PreparedSample>, n_langs: usize) -> Self {
        let by_lang =
            (0..n_langs).map(|l| (0..samples.len()).filter(|&i| samples[i].entries[l].is_some()).collect()).collect();
        PreparedCorpus { samples, by_lang }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn instances_of(&self, lang: usize) -> &[usize] {
        &self.by_lang[lang]
    }
}

/// Per-language scalar terms accumulated on the tape.
struct Terms<'t> {
    ce: Vec<Option<Var<'t>>>,
    mse: Vec<Option<Var<'t>>>,
    kl_specific: Vec<Option<Var<'t>>>,
    kl_shared: Option<Var<'t>>,
    kl_shift: Vec<Option<Var<'t>>>,
}

fn accumulate<'t>(slot: &mut Option<Var<'t>>, v: Var<'t>) -> Result<()> {
    *slot = Some(match slot {
        Some(a) => a.add(&v)?,
        None => v,
    });
    Ok(())
}

fn sum_vars<'t>(tape: &'t Tape, vs: impl Iterator<Item = Var<'t>>) -> Result<Var<'t>> {
    let mut acc: Option<Var<'t>> = None;
    for v in vs {
        accumulate(&mut acc, v)?;
    }
    Ok(acc.unwrap_or_else(|| tape.constant(Tensor::zeros(Vec::<usize>::new()))))
}

impl<'t> Terms<'t> {
    fn new(n: usize) -> Self {
        Terms {
            ce: vec![None; n],
            mse: vec![None; n],
            kl_specific: vec![None; n],
            kl_shared: None,
            kl_shift: vec![None; n],
        }
    }

    /// Total on the tape with the exact operation order of
    /// [`LossBreakdown::total_at`], plus the breakdown read off the tape.
    fn finish(self, tape: &'t Tape, cfg: &LossConfig) -> Result<(Var<'t>, LossBreakdown)> {
        let n = self.ce.len();
        let item = |v: &Option<Var<'t>>| v.map(|v| v.item());
        let mut b = LossBreakdown::zeros(n, cfg.lambda, cfg.mse_weight);
        b.ce = self.ce.iter().map(item).collect();
        b.mse = self.mse.iter().map(item).collect();
        b.kl_specific = self.kl_specific.iter().map(|v| item(v).unwrap_or(0.0)).collect();
        b.kl_shared = item(&self.kl_shared).unwrap_or(0.0);
        b.kl_shift = self.kl_shift.iter().map(|v| item(v).unwrap_or(0.0)).collect();

        let a = 1.0 + cfg.lambda;
        let ce = sum_vars(tape, self.ce.iter().flatten().copied())?;
        let mse = sum_vars(tape, self.mse.iter().flatten().copied())?;
        let spec = sum_vars(tape, self.kl_specific.iter().flatten().copied())?;
        let shift = sum_vars(tape, self.kl_shift.iter().flatten().copied())?;
        let shared = self.kl_shared.unwrap_or_else(|| tape.constant(Tensor::zeros(Vec::<usize>::new())));
        let recon = ce.add(&mse.scale(cfg.mse_weight)?)?.scale(a)?;
        let total = recon.add(&spec.scale(a)?)?.add(&shared)?.add(&shift.scale(cfg.lambda)?)?;
        b.total = total.item();
        Ok((total, b))
    }
}

fn normal_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn mse<'t>(x: &Var<'t>, target: &Var<'t>, detach: bool) -> Result<Var<'t>> {
    let target = if detach { target.detach() } else { *target };
    Ok(x.sub(&target)?.square()?.mean_all()?)
}

/// Cross-entropy of target `t` decoded from `flag_hat`, averaged over the
/// chosen source code blocks.
fn target_ce<'t>(
    net: &Net<'t, '_>,
    flag_hat: &Var<'t>,
    t: usize,
    target: &[usize],
    sources: &[&Encoded<'t>],
    mode: SourceMode,
    rng: &mut ChaCha8Rng,
) -> Result<Var<'t>> {
    let chosen: Vec<&Encoded<'t>> = match mode {
        SourceMode::All => sources.to_vec(),
        SourceMode::SampleOne => vec![sources[rng.random_range(0..sources.len())]],
    };
    let mut acc = None;
    for s in &chosen {
        let mem = net.memory(flag_hat, &s.code)?;
        accumulate(&mut acc, net.teacher_ce(&mem, t, target)?)?;
    }
    Ok(acc.expect("at least one source").scale(1.0 / chosen.len() as f64)?)
}

/// Objective of a fully present sample, recorded on `net`'s tape.
pub fn multi_parallel_objective<'t>(
    net: &Net<'t, '_>,
    sample: &PreparedSample,
    cfg: &LossConfig,
    seed: u64,
) -> Result<(Var<'t>, LossBreakdown)> {
    let n = sample.n_langs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = net.params().dims().latent;
    let enc: Vec<Encoded<'t>> = (0..n).map(|l| Ok(net.encode(&sample.instance(l)?.input)?)).collect::<Result<_>>()?;
    let flags: Vec<(usize, Var<'t>)> = enc.iter().map(|e| (e.lang, e.flag)).collect();
    let q_s = net.infer_shared(&flags)?;
    let z_s = q_s.reparameterize(&normal_noise(&mut rng, latent))?;
    let mut terms = Terms::new(n);
    terms.kl_shared = Some(q_s.kl_to_standard()?);
    for l in 0..n {
        let q = net.infer_specific(&enc[l].flag, l)?;
        let r = net.infer_shift(&enc[l].flag, l)?;
        let z = q.reparameterize(&normal_noise(&mut rng, latent))?;
        let x_hat = net.reconstruct_flag(&z, &z_s, l)?;
        terms.mse[l] = Some(mse(&x_hat, &enc[l].flag, cfg.detach_target)?);
        let sources: Vec<&Encoded<'t>> = (0..n).filter(|&s| s != l).map(|s| &enc[s]).collect();
        let target = &sample.instance(l)?.target;
        terms.ce[l] = Some(target_ce(net, &x_hat, l, target, &sources, cfg.sources, &mut rng)?);
        terms.kl_specific[l] = Some(q.kl_to_standard()?);
        terms.kl_shift[l] = Some(q_s.kl_between(&r)?);
    }
    terms.finish(net.tape(), cfg)
}

/// Objective of a partially missing sample: absent languages are filled
/// with pseudo instances drawn uniformly from `pool`, and for each
/// shift-shared latent of a present language the reconstructed set is run
/// through the multi-parallel terms. Only present targets are scored.
pub fn partial_objective<'t>(
    net: &Net<'t, '_>,
    sample: &PreparedSample,
    pool: &PreparedCorpus,
    cfg: &LossConfig,
    seed: u64,
) -> Result<(Var<'t>, LossBreakdown)> {
    let n = sample.n_langs();
    let present = sample.present();
    if present.is_empty() {
        return Err(TrainError::NonePresent);
    }
    if present.len() == n {
        return Err(TrainError::AllPresent);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = net.params().dims().latent;
    let mut inputs: Vec<&[usize]> = Vec::with_capacity(n);
    for l in 0..n {
        match &sample.entries[l] {
            Some(inst) => inputs.push(&inst.input),
            None => {
                let cands = pool.instances_of(l);
                if cands.is_empty() {
                    return Err(TrainError::EmptyPool(l));
                }
                let pick = cands[rng.random_range(0..cands.len())];
                let inst = pool.samples[pick].entries[l].as_ref().expect("indexed instance");
                inputs.push(&inst.input);
            }
        }
    }
    let enc: Vec<Encoded<'t>> = inputs.iter().map(|ids| Ok(net.encode(ids)?)).collect::<Result<_>>()?;
    let q: Vec<_> = (0..n).map(|l| net.infer_specific(&enc[l].flag, l)).collect::<std::result::Result<_, _>>()?;
    let inner: Vec<usize> = if cfg.inner_all { (0..n).collect() } else { present.clone() };
    let mut terms = Terms::new(n);
    for &i in &inner {
        let r_i = net.infer_shift(&enc[i].flag, i)?;
        let zs_i = r_i.reparameterize(&normal_noise(&mut rng, latent))?;
        let mut rebuilt = Vec::with_capacity(n);
        for (l, q_l) in q.iter().enumerate() {
            let z = q_l.reparameterize(&normal_noise(&mut rng, latent))?;
            rebuilt.push((l, net.reconstruct_flag(&z, &zs_i, l)?));
        }
        // multi-parallel pass over the rebuilt flag blocks
        let q_s = net.infer_shared(&rebuilt)?;
        let z_s = q_s.reparameterize(&normal_noise(&mut rng, latent))?;
        accumulate(&mut terms.kl_shared, q_s.kl_to_standard()?)?;
        for (l, x_hat) in &rebuilt {
            let l = *l;
            let q2 = net.infer_specific(x_hat, l)?;
            let r2 = net.infer_shift(x_hat, l)?;
            accumulate(&mut terms.kl_specific[l], q2.kl_to_standard()?)?;
            accumulate(&mut terms.kl_shift[l], q_s.kl_between(&r2)?)?;
            if sample.entries[l].is_none() {
                continue;
            }
            let z2 = q2.reparameterize(&normal_noise(&mut rng, latent))?;
            let x_tilde = net.reconstruct_flag(&z2, &z_s, l)?;
            accumulate(&mut terms.mse[l], mse(&x_tilde, &enc[l].flag, cfg.detach_target)?)?;
            let others: Vec<&Encoded<'t>> = present.iter().filter(|&&s| s != l).map(|&s| &enc[s]).collect();
            let sources = if others.is_empty() { vec![&enc[l]] } else { others };
            let target = &sample.instance(l)?.target;
            let ce = target_ce(net, &x_tilde, l, target, &sources, cfg.sources, &mut rng)?;
            accumulate(&mut terms.ce[l], ce)?;
        }
    }
    terms.finish(net.tape(), cfg)
}

/// Loss and gradients in layout order.
#[derive(Clone, Debug)]
pub struct Evaluated {
    pub breakdown: LossBreakdown,
    pub grads: Vec<Tensor>,
}

fn evaluate(
    params: &ModelParams,
    f: impl for<'t> FnOnce(&Net<'t, '_>) -> Result<(Var<'t>, LossBreakdown)>,
) -> Result<Evaluated> {
    let tape = Tape::new();
    let net = Net::new(&tape, params, true);
    let (total, breakdown) = f(&net)?;
    let mut g = tape.backward(total)?;
    let grads = net.vars().iter().map(|v| g.take(*v)).collect();
    Ok(Evaluated { breakdown, grads })
}

/// Value of the multi-parallel objective; every language must be present.
pub fn loss_multi_parallel(
    params: &ModelParams,
    sample: &PreparedSample,
    cfg: &LossConfig,
    seed: u64,
) -> Result<LossBreakdown> {
    let tape = Tape::new();
    let net = Net::new(&tape, params, false);
    Ok(multi_parallel_objective(&net, sample, cfg, seed)?.1)
}

/// One partially-missing step: loss and gradients accumulated over the
/// inner loop, ready for a single optimizer update.
pub fn step_partially_missing(
    params: &ModelParams,
    sample: &PreparedSample,
    pool: &PreparedCorpus,
    cfg: &LossConfig,
    seed: u64,
) -> Result<Evaluated> {
    evaluate(params, |net| partial_objective(net, sample, pool, cfg, seed))
}

/// Dispatches on whether the sample is complete.
pub fn loss_and_grads(
    params: &ModelParams,
    sample: &PreparedSample,
    pool: &PreparedCorpus,
    cfg: &LossConfig,
    seed: u64,
) -> Result<Evaluated> {
    if sample.entries.iter().all(Option::is_some) {
        evaluate(params, |net| multi_parallel_objective(net, sample, cfg, seed))
    } else {
        step_partially_missing(params, sample, pool, cfg, seed)
    }
}
