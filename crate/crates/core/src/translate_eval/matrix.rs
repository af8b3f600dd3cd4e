use rayon::prelude::*;

use super::bleu::bleu4;
use super::translate::translate_ids;
use super::{EvalError, Result};
use crate::corpus::{encode_input, SemiParallelCorpus};
use crate::model::{DecodeConfig, ModelParams};

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixConfig {
    pub decode: DecodeConfig,
    /// Threads for translating test pairs; results do not depend on it.
    pub workers: usize,
    /// Cap on test pairs per direction, first ones in corpus order.
    pub max_pairs: Option<usize>,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig { decode: DecodeConfig::default(), workers: 1, max_pairs: None }
    }
}

/// Per-direction scores; `[src][tgt]`, `None` where a direction has no pairs
/// and on the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct BleuMatrix {
    pub languages: Vec<String>,
    pub bleu: Vec<Vec<Option<f64>>>,
    pub naive_copy: Vec<Vec<Option<f64>>>,
    pub pairs: Vec<Vec<usize>>,
}

fn table_csv(languages: &[String], cells: &[Vec<Option<f64>>]) -> String {
    let mut s = format!("src,{}\n", languages.join(","));
    for (i, row) in cells.iter().enumerate() {
        s.push_str(&languages[i]);
        for c in row {
            s.push(',');
            if let Some(v) = c {
                s.push_str(&format!("{v:.4}"));
            }
        }
        s.push('\n');
    }
    s
}

impl BleuMatrix {
    pub fn bleu_csv(&self) -> String {
        table_csv(&self.languages, &self.bleu)
    }

    pub fn naive_copy_csv(&self) -> String {
        table_csv(&self.languages, &self.naive_copy)
    }

    /// Off-diagonal directions that were scored.
    pub fn directions(&self) -> Vec<(usize, usize)> {
        let n = self.languages.len();
        (0..n).flat_map(|s| (0..n).map(move |t| (s, t))).filter(|&(s, t)| self.bleu[s][t].is_some()).collect()
    }

    /// Mean BLEU over scored directions.
    pub fn mean_bleu(&self) -> Option<f64> {
        let d = self.directions();
        (!d.is_empty()).then(|| d.iter().map(|&(s, t)| self.bleu[s][t].unwrap()).sum::<f64>() / d.len() as f64)
    }
}

/// Translates every test pair of every direction and scores it against the
/// reference and against copying the source.
pub fn evaluate_matrix(test: &SemiParallelCorpus, params: &ModelParams, cfg: &MatrixConfig) -> Result<BleuMatrix> {
    let n = test.n_langs();
    if n != params.dims().n_langs {
        return Err(EvalError::Config(format!("corpus has {n} languages, model {}", params.dims().n_langs)));
    }
    let k = params.dims().flag_len;
    let mut jobs = Vec::new();
    let mut pairs = vec![vec![0; n]; n];
    for (s, row) in pairs.iter_mut().enumerate() {
        for t in (0..n).filter(|&t| t != s) {
            let both = test.samples.iter().filter(|x| x.entries[s].is_some() && x.entries[t].is_some());
            for sample in both.take(cfg.max_pairs.unwrap_or(usize::MAX)) {
                jobs.push((s, t, sample));
                row[t] += 1;
            }
        }
    }
    let run = || {
        jobs.par_iter()
            .map(|&(s, t, sample)| {
                let src = sample.entries[s].as_ref().expect("filtered");
                let input = encode_input(&test.vocab, src, s, k)?;
                let ids = translate_ids(params, &input, s, t, &cfg.decode, None)?;
                Ok(test.vocab.decode(&ids))
            })
            .collect::<Result<Vec<Vec<String>>>>()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let outputs = pool.install(run)?;

    let mut bleu = vec![vec![None; n]; n];
    let mut naive_copy = vec![vec![None; n]; n];
    let mut at = 0;
    for s in 0..n {
        for t in (0..n).filter(|&t| t != s) {
            let m = pairs[s][t];
            if m == 0 {
                continue;
            }
            let slice = &jobs[at..at + m];
            let cands = &outputs[at..at + m];
            let refs: Vec<Vec<String>> = slice.iter().map(|j| j.2.entries[t].clone().expect("filtered")).collect();
            let srcs: Vec<Vec<String>> = slice.iter().map(|j| j.2.entries[s].clone().expect("filtered")).collect();
            bleu[s][t] = Some(bleu4(cands, &refs)?.bleu);
            naive_copy[s][t] = Some(bleu4(&srcs, &refs)?.bleu);
            at += m;
        }
    }
    Ok(BleuMatrix { languages: test.languages.clone(), bleu, naive_copy, pairs })
}
