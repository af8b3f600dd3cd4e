use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{loss_and_grads, Evaluated, LossConfig, PreparedCorpus, PreparedSample};
use super::optim::{AdamW, AdamWConfig};
use super::{Result, TrainError};
use crate::corpus::SemiParallelCorpus;
use crate::model::{save_checkpoint, Checkpoint, DecodeConfig, ModelDims, ModelParams};
use crate::seed::derive;
use crate::tensor::Tensor;
use crate::translate_eval::{evaluate_matrix, MatrixConfig};

pub const METRICS_HEADER: &str = "epoch,step,total,ce,mse,kl_specific,kl_shared,kl_shift,val_bleu";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// Every sample; incomplete ones go through the pseudo-instance step.
    SemiParallel,
    /// Fully present samples only.
    ParallelOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossConfig,
    /// `total_steps: None` decays the learning rate over the planned run.
    pub optim: AdamWConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub steps: Option<u64>,
    pub seed: u64,
    pub mode: TrainMode,
    /// Threads evaluating samples of a batch; results do not depend on it.
    pub workers: usize,
    pub decode: DecodeConfig,
    /// Test pairs per direction for the per-epoch validation BLEU.
    pub val_pairs: Option<usize>,
    /// Metrics CSV and per-epoch checkpoints go here when set.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            optim: AdamWConfig::default(),
            batch_size: 16,
            epochs: 10,
            steps: None,
            seed: 0,
            mode: TrainMode::SemiParallel,
            workers: 1,
            decode: DecodeConfig::default(),
            val_pairs: None,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !self.loss.lambda.is_finite() || self.loss.lambda < 0.0 {
            return bad("lambda must be finite and >= 0");
        }
        if !self.optim.lr.is_finite() || self.optim.lr <= 0.0 {
            return bad("learning rate must be finite and > 0");
        }
        if self.batch_size == 0 || self.workers == 0 {
            return bad("batch size and workers must be positive");
        }
        Ok(())
    }
}

/// Means over the samples of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub total: f64,
    pub ce: f64,
    pub mse: f64,
    pub kl_specific: f64,
    pub kl_shared: f64,
    pub kl_shift: f64,
    pub val_bleu: Option<f64>,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let mut s = format!(
            "{},{},{},{},{},{},{},{},",
            self.epoch, self.step, self.total, self.ce, self.mse, self.kl_specific, self.kl_shared, self.kl_shift
        );
        if let Some(b) = self.val_bleu {
            let _ = write!(s, "{b}");
        }
        s
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub metrics: Vec<EpochMetrics>,
    pub steps: u64,
}

impl TrainOutcome {
    pub fn metrics_csv(&self) -> String {
        metrics_csv(&self.metrics)
    }
}

#[derive(Default)]
struct Sums {
    n: usize,
    total: f64,
    ce: f64,
    mse: f64,
    kl_specific: f64,
    kl_shared: f64,
    kl_shift: f64,
}

impl Sums {
    fn add(&mut self, e: &Evaluated) {
        let b = &e.breakdown;
        self.n += 1;
        self.total += b.total;
        self.ce += b.ce_sum();
        self.mse += b.mse_sum();
        self.kl_specific += b.kl_specific_sum();
        self.kl_shared += b.kl_shared;
        self.kl_shift += b.kl_shift_sum();
    }

    fn finish(&self, epoch: usize, step: u64, val_bleu: Option<f64>) -> EpochMetrics {
        let d = self.n.max(1) as f64;
        EpochMetrics {
            epoch,
            step,
            total: self.total / d,
            ce: self.ce / d,
            mse: self.mse / d,
            kl_specific: self.kl_specific / d,
            kl_shared: self.kl_shared / d,
            kl_shift: self.kl_shift / d,
            val_bleu,
        }
    }
}

/// Batch-mean gradient, summed in batch order.
fn mean_grads(results: &[Evaluated]) -> Result<Vec<Tensor>> {
    let first = &results[0].grads;
    let scale = 1.0 / results.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(i, g0)| {
            let mut acc = g0.to_vec();
            for r in &results[1..] {
                for (a, b) in acc.iter_mut().zip(r.grads[i].data()) {
                    *a += b;
                }
            }
            acc.iter_mut().for_each(|a| *a *= scale);
            Ok(Tensor::new(g0.shape().to_vec(), acc)?)
        })
        .collect()
}

/// Trains a fresh model on `corpus`. `val`, when given, is scored after
/// every epoch.
pub fn train(
    corpus: &SemiParallelCorpus,
    val: Option<&SemiParallelCorpus>,
    dims: &ModelDims,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let params = ModelParams::init(dims, derive(cfg.seed, "init"))?;
    train_from(corpus, val, params, cfg)
}

/// Continues training `params`.
pub fn train_from(
    corpus: &SemiParallelCorpus,
    val: Option<&SemiParallelCorpus>,
    mut params: ModelParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dims = params.dims().clone();
    if corpus.n_langs() != dims.n_langs || corpus.vocab.len() != dims.vocab {
        return Err(TrainError::Config(format!(
            "corpus has {} languages and {} tokens, model expects {} and {}",
            corpus.n_langs(),
            corpus.vocab.len(),
            dims.n_langs,
            dims.vocab
        )));
    }
    let pool_corpus = PreparedCorpus::new(corpus, dims.flag_len)?;
    let order: Vec<usize> = match cfg.mode {
        TrainMode::SemiParallel => (0..pool_corpus.len()).collect(),
        TrainMode::ParallelOnly => {
            (0..pool_corpus.len()).filter(|&i| pool_corpus.samples[i].entries.iter().all(Option::is_some)).collect()
        }
    };
    if order.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let batches_per_epoch = order.len().div_ceil(cfg.batch_size) as u64;
    let per_run = batches_per_epoch.saturating_mul(cfg.epochs as u64);
    let planned = cfg.steps.map_or(per_run, |s| s.min(per_run));
    let mut optim_cfg = cfg.optim.clone();
    if optim_cfg.total_steps.is_none() {
        optim_cfg.total_steps = Some(planned);
    }
    let mut opt = AdamW::for_params(optim_cfg, &params);
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| TrainError::Config(e.to_string()))?;
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), format!("{METRICS_HEADER}\n"))?;
    }

    let mut metrics = Vec::new();
    let mut step = 0u64;
    'epochs: for epoch in 1..=cfg.epochs {
        if step >= planned {
            break;
        }
        let mut shuffled = order.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(cfg.seed, &format!("shuffle-{epoch}"))));
        let mut sums = Sums::default();
        for batch in shuffled.chunks(cfg.batch_size) {
            let samples: Vec<(usize, &PreparedSample)> =
                batch.iter().enumerate().map(|(pos, &i)| (pos, &pool_corpus.samples[i])).collect();
            let p = &params;
            let results: Vec<Evaluated> = workers.install(|| {
                samples
                    .par_iter()
                    .map(|&(pos, s)| {
                        let seed = derive(cfg.seed, &format!("step-{step}-{pos}"));
                        loss_and_grads(p, s, &pool_corpus, &cfg.loss, seed)
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            results.iter().for_each(|r| sums.add(r));
            let grads = mean_grads(&results)?;
            opt.step(&mut params, &grads)?;
            step += 1;
            if step >= planned {
                finish_epoch(corpus, val, &params, cfg, epoch, step, &sums, &mut metrics)?;
                break 'epochs;
            }
        }
        finish_epoch(corpus, val, &params, cfg, epoch, step, &sums, &mut metrics)?;
    }
    Ok(TrainOutcome { params, metrics, steps: step })
}

#[allow(clippy::too_many_arguments)]
fn finish_epoch(
    corpus: &SemiParallelCorpus,
    val: Option<&SemiParallelCorpus>,
    params: &ModelParams,
    cfg: &TrainConfig,
    epoch: usize,
    step: u64,
    sums: &Sums,
    metrics: &mut Vec<EpochMetrics>,
) -> Result<()> {
    let val_bleu = match val {
        Some(v) => {
            let mc = MatrixConfig { decode: cfg.decode, workers: cfg.workers, max_pairs: cfg.val_pairs };
            evaluate_matrix(v, params, &mc).map_err(|e| TrainError::Config(format!("validation: {e}")))?.mean_bleu()
        }
        None => None,
    };
    let row = sums.finish(epoch, step, val_bleu);
    if let Some(dir) = &cfg.out_dir {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new().append(true).open(dir.join("metrics.csv"))?;
        writeln!(f, "{}", row.csv_row())?;
        let ck =
            Checkpoint { params: params.clone(), languages: corpus.languages.clone(), vocab: corpus.vocab.clone() };
        save_checkpoint(&ck, &dir.join(format!("epoch-{epoch}.ptck")))?;
    }
    metrics.push(row);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate::{generate_corpus, GenConfig};

    fn micro_corpus(samples: usize) -> SemiParallelCorpus {
        let mut g = GenConfig::new(&["toyA", "toyB"], samples, 3);
        g.flag_len = 2;
        g.max_code_len = 12;
        generate_corpus(&g).unwrap()
    }

    fn micro_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            epochs: 2,
            seed: 5,
            optim: AdamWConfig { lr: 1e-2, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn fixed_seed_runs_are_bit_identical() {
        let c = micro_corpus(12);
        let dims = ModelDims::micro(c.vocab.len(), 2);
        let a = train(&c, None, &dims, &micro_cfg()).unwrap();
        let b = train(&c, None, &dims, &TrainConfig { workers: 3, ..micro_cfg() }).unwrap();
        assert_eq!(a.metrics_csv(), b.metrics_csv());
        assert_eq!(a.params.tensors(), b.params.tensors());
        assert_eq!(a.metrics.len(), 2);
        assert_eq!(a.steps, 6);
    }

    #[test]
    fn step_cap_stops_mid_epoch() {
        let c = micro_corpus(12);
        let dims = ModelDims::micro(c.vocab.len(), 2);
        let out = train(&c, None, &dims, &TrainConfig { steps: Some(4), ..micro_cfg() }).unwrap();
        assert_eq!(out.steps, 4);
        assert_eq!(out.metrics.last().unwrap().step, 4);
    }

    #[test]
    fn empty_corpus_fails_before_training() {
        let mut c = micro_corpus(4);
        c.samples.clear();
        let dims = ModelDims::micro(c.vocab.len(), 2);
        assert!(matches!(train(&c, None, &dims, &micro_cfg()), Err(TrainError::EmptyCorpus)));
    }

    #[test]
    fn writes_metrics_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let c = micro_corpus(8);
        let dims = ModelDims::micro(c.vocab.len(), 2);
        let cfg = TrainConfig { out_dir: Some(dir.path().to_path_buf()), ..micro_cfg() };
        let out = train(&c, None, &dims, &cfg).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv, out.metrics_csv());
        assert!(dir.path().join("epoch-1.ptck").exists());
        assert!(dir.path().join("epoch-2.ptck").exists());
    }
}
