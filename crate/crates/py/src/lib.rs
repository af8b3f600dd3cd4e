//! Python bindings: corpora, training, translation, scoring and checks.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use polytrans::corpus::{self, GenConfig, SemiParallelCorpus, Split};
use polytrans::gaussian::DiagGaussian;
use polytrans::model::{self, Checkpoint, DecodeConfig, ModelDims};
use polytrans::train::{self, AdamWConfig, TrainConfig, TrainMode};
use polytrans::translate_eval::{self as te, MatrixConfig, TranslationRequest};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

/// A semi-parallel corpus of tokenized programs.
#[pyclass(name = "Corpus", module = "polytrans_py")]
struct PyCorpus {
    inner: SemiParallelCorpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    #[pyo3(signature = (path, languages=None, flag_len=4))]
    fn load(path: PathBuf, languages: Option<Vec<String>>, flag_len: usize) -> PyResult<Self> {
        let inner = corpus::load_corpus(&path, languages.as_deref(), flag_len, Split::Train).map_err(io_err)?;
        Ok(PyCorpus { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        corpus::save_corpus(&self.inner, &path).map_err(io_err)
    }

    #[getter]
    fn languages(&self) -> Vec<String> {
        self.inner.languages.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }

    /// Token lists per language, `None` where absent.
    fn sample(&self, i: usize) -> PyResult<Vec<Option<Vec<String>>>> {
        self.inner.samples.get(i).map(|s| s.entries.clone()).ok_or_else(|| value_err(format!("no sample {i}")))
    }

    fn multi_parallel_fraction(&self) -> f64 {
        self.inner.multi_parallel_fraction()
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = corpus::stats(&self.inner);
        let d = PyDict::new(py);
        d.set_item("samples", s.samples)?;
        d.set_item("counts", s.languages.iter().cloned().zip(s.counts.iter().copied()).collect::<Vec<_>>())?;
        d.set_item("multi_parallel_fraction", s.multi_parallel_fraction)?;
        d.set_item("bilingual_parallel_fraction", s.bilingual_parallel_fraction)?;
        Ok(d)
    }
}

/// Generates seeded (train, test) toy corpora.
#[pyfunction]
#[pyo3(signature = (languages, samples, seed, test_samples=100, missing_rates=None, flag_len=4))]
fn generate_corpus(
    languages: Vec<String>,
    samples: usize,
    seed: u64,
    test_samples: usize,
    missing_rates: Option<Vec<f64>>,
    flag_len: usize,
) -> PyResult<(PyCorpus, PyCorpus)> {
    let names: Vec<&str> = languages.iter().map(String::as_str).collect();
    let mut cfg = GenConfig::new(&names, samples, seed);
    if let Some(r) = missing_rates {
        cfg.missing_rates = r;
    }
    cfg.flag_len = flag_len;
    let (tr, test) = corpus::generate_splits(&cfg, test_samples).map_err(value_err)?;
    Ok((PyCorpus { inner: tr }, PyCorpus { inner: test }))
}

/// A trained model with its vocabulary and language list.
#[pyclass(name = "Model", module = "polytrans_py")]
struct PyModel {
    inner: Checkpoint,
}

#[pymethods]
impl PyModel {
    /// Trains a fresh model. `dims` is "micro" or "desk".
    #[staticmethod]
    #[pyo3(signature = (corpus, steps, lr=1e-3, seed=0, dims="micro", batch_size=16, parallel_only=false, workers=1))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        corpus: &PyCorpus,
        steps: u64,
        lr: f64,
        seed: u64,
        dims: &str,
        batch_size: usize,
        parallel_only: bool,
        workers: usize,
    ) -> PyResult<Self> {
        let c = &corpus.inner;
        let mut d = match dims {
            "micro" => ModelDims::micro(c.vocab.len(), c.n_langs()),
            "desk" => ModelDims::desk(c.vocab.len(), c.n_langs()),
            other => return Err(value_err(format!("unknown dims preset {other:?}"))),
        };
        d.flag_len = c.vocab.flag_len();
        let cfg = TrainConfig {
            optim: AdamWConfig { lr, ..Default::default() },
            batch_size,
            epochs: usize::MAX,
            steps: Some(steps),
            seed,
            mode: if parallel_only { TrainMode::ParallelOnly } else { TrainMode::SemiParallel },
            workers,
            ..Default::default()
        };
        let out = train::train(c, None, &d, &cfg).map_err(value_err)?;
        Ok(PyModel { inner: Checkpoint { params: out.params, languages: c.languages.clone(), vocab: c.vocab.clone() } })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel { inner: model::load_checkpoint(&path).map_err(io_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model::save_checkpoint(&self.inner, &path).map_err(io_err)
    }

    #[getter]
    fn languages(&self) -> Vec<String> {
        self.inner.languages.clone()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.params.numel()
    }

    #[pyo3(signature = (tokens, src, tgt, beam=1, max_len=40, sample_seed=None))]
    fn translate(
        &self,
        tokens: Vec<String>,
        src: &str,
        tgt: &str,
        beam: usize,
        max_len: usize,
        sample_seed: Option<u64>,
    ) -> PyResult<Vec<String>> {
        let lang = |n: &str| {
            self.inner.languages.iter().position(|l| l == n).ok_or_else(|| value_err(format!("unknown language {n}")))
        };
        let req = TranslationRequest {
            source: tokens,
            src: lang(src)?,
            tgt: lang(tgt)?,
            decode: DecodeConfig { beam, max_len },
            sample_seed,
        };
        te::translate(&self.inner.params, &self.inner.vocab, &req).map_err(value_err)
    }

    /// BLEU and naive-copy tables, `None` where a direction has no pairs.
    #[pyo3(signature = (test, max_pairs=None, workers=1))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        test: &PyCorpus,
        max_pairs: Option<usize>,
        workers: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mc = MatrixConfig { max_pairs, workers, ..Default::default() };
        let m = te::evaluate_matrix(&test.inner, &self.inner.params, &mc).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("languages", m.languages.clone())?;
        d.set_item("bleu", m.bleu.clone())?;
        d.set_item("naive_copy", m.naive_copy.clone())?;
        d.set_item("mean_bleu", m.mean_bleu())?;
        Ok(d)
    }
}

/// Corpus BLEU-4 on a 0..100 scale.
#[pyfunction]
#[pyo3(signature = (candidates, references, smoothing=true))]
fn bleu4(candidates: Vec<Vec<String>>, references: Vec<Vec<String>>, smoothing: bool) -> PyResult<f64> {
    Ok(te::bleu4_with(&candidates, &references, smoothing).map_err(value_err)?.bleu)
}

/// Unified and pairwise parameter totals for `n_langs` languages.
#[pyfunction]
#[pyo3(signature = (n_langs, paper_dims=true, vocab=80))]
fn count_params<'py>(py: Python<'py>, n_langs: usize, paper_dims: bool, vocab: usize) -> PyResult<Bound<'py, PyDict>> {
    let dims = if paper_dims { ModelDims::paper(n_langs) } else { ModelDims::desk(vocab, n_langs) };
    let r = te::count_params(&dims).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("encoder", r.encoder)?;
    d.set_item("decoder", r.decoder)?;
    d.set_item("projectors", r.projectors)?;
    d.set_item("pairwise_models", r.pairwise_models)?;
    d.set_item("pairwise_total", r.pairwise_total)?;
    d.set_item("unified_total", r.unified_total)?;
    d.set_item("ratio", r.ratio())?;
    Ok(d)
}

/// Runs the exact information-theoretic suite; returns (passed, table).
#[pyfunction]
#[pyo3(signature = (seed=1, cases=50, lam=1e-3))]
fn verify(seed: u64, cases: usize, lam: f64) -> PyResult<(bool, String)> {
    let r = polytrans::infolab::run_suite(seed, cases, lam).map_err(value_err)?;
    Ok((r.passed(), r.to_table()))
}

/// Closed-form KL(N(m1, e^lv1) || N(m2, e^lv2)) for diagonal Gaussians.
#[pyfunction]
fn kl_between(m1: Vec<f64>, lv1: Vec<f64>, m2: Vec<f64>, lv2: Vec<f64>) -> PyResult<f64> {
    let q = DiagGaussian::new(m1, lv1).map_err(value_err)?;
    let r = DiagGaussian::new(m2, lv2).map_err(value_err)?;
    q.kl_between(&r).map_err(value_err)
}

#[pymodule]
fn polytrans_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(bleu4, m)?)?;
    m.add_function(wrap_pyfunction!(count_params, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(kl_between, m)?)?;
    Ok(())
}
