//! Finite-difference gradient checks over every tape op, the Gaussian KL
//! forms and the full training objective on a micro model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::generate::{generate_corpus, GenConfig};
use crate::gaussian::GaussianVar;
use crate::model::{ModelDims, ModelParams, Net};
use crate::seed::derive;
use crate::tensor::{grad_check_many, Result, Tape, Tensor, TensorError, Var};
use crate::train::{multi_parallel_objective, partial_objective, LossConfig, PreparedCorpus};

pub const OP_TOLERANCE: f64 = 1e-4;
pub const LOSS_TOLERANCE: f64 = 1e-3;
const EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradRow {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

pub fn grad_table(rows: &[GradRow]) -> String {
    let mut s = format!("{:<28} {:>12} {:>8} {:>10}  status\n", "check", "max_rel_err", "coords", "tolerance");
    for r in rows {
        s.push_str(&format!(
            "{:<28} {:>12.3e} {:>8} {:>10.0e}  {}\n",
            r.name,
            r.max_rel_err,
            r.checked,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        ));
    }
    s
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("finite")
}

/// Values bounded away from zero, for ops with a kink there.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.2..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).expect("finite")
}

/// Scalar probe `sum(w * y)` with fixed random weights so every output
/// element influences the checked value.
fn probe<'t>(tape: &'t Tape, y: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = uniform(&mut rng, &y.shape(), -1.0, 1.0);
    y.mul(&tape.constant(w))?.sum_all()
}

type Case = (&'static str, Vec<Tensor>, Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>);

/// Every differentiable tape op and both KL closed forms.
pub fn op_gradient_suite(seed: u64) -> Result<Vec<GradRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "grad-ops"));
    let ps = derive(seed, "grad-probe");
    let r = &mut rng;
    let m34 = |r: &mut ChaCha8Rng| uniform(r, &[3, 4], -1.0, 1.0);
    let cases: Vec<Case> = vec![
        ("add", vec![m34(r), m34(r)], Box::new(move |t, v| probe(t, v[0].add(&v[1])?, ps))),
        (
            "add_broadcast",
            vec![m34(r), uniform(r, &[4], -1.0, 1.0)],
            Box::new(move |t, v| probe(t, v[0].add(&v[1])?, ps)),
        ),
        ("sub", vec![m34(r), uniform(r, &[4], -1.0, 1.0)], Box::new(move |t, v| probe(t, v[0].sub(&v[1])?, ps))),
        ("mul", vec![m34(r), m34(r)], Box::new(move |t, v| probe(t, v[0].mul(&v[1])?, ps))),
        (
            "mul_broadcast",
            vec![m34(r), uniform(r, &[4], -1.0, 1.0)],
            Box::new(move |t, v| probe(t, v[0].mul(&v[1])?, ps)),
        ),
        ("scale", vec![m34(r)], Box::new(move |t, v| probe(t, v[0].scale(-1.7)?, ps))),
        ("add_scalar", vec![m34(r)], Box::new(move |t, v| probe(t, v[0].add_scalar(0.3)?.square()?, ps))),
        ("exp", vec![m34(r)], Box::new(move |t, v| probe(t, v[0].exp()?, ps))),
        ("log", vec![uniform(r, &[3, 4], 0.3, 2.0)], Box::new(move |t, v| probe(t, v[0].log()?, ps))),
        ("tanh", vec![m34(r)], Box::new(move |t, v| probe(t, v[0].tanh()?, ps))),
        ("sigmoid", vec![m34(r)], Box::new(move |t, v| probe(t, v[0].sigmoid()?, ps))),
        ("relu", vec![off_zero(r, &[3, 4])], Box::new(move |t, v| probe(t, v[0].relu()?, ps))),
        ("clamp", vec![off_zero(r, &[3, 4])], Box::new(move |t, v| probe(t, v[0].clamp(-0.1, 0.1)?, ps))),
        ("square", vec![m34(r)], Box::new(move |t, v| probe(t, v[0].square()?, ps))),
        (
            "matmul",
            vec![m34(r), uniform(r, &[4, 2], -1.0, 1.0)],
            Box::new(move |t, v| probe(t, v[0].matmul(&v[1])?, ps)),
        ),
        (
            "matmul_t",
            vec![m34(r), uniform(r, &[5, 4], -1.0, 1.0)],
            Box::new(move |t, v| probe(t, v[0].matmul_t(&v[1])?, ps)),
        ),
        ("transpose", vec![m34(r)], Box::new(move |t, v| probe(t, v[0].transpose()?, ps))),
        ("softmax", vec![m34(r)], Box::new(move |t, v| probe(t, v[0].softmax(1)?, ps))),
        ("softmax_axis0", vec![m34(r)], Box::new(move |t, v| probe(t, v[0].softmax(0)?, ps))),
        ("log_softmax", vec![m34(r)], Box::new(move |t, v| probe(t, v[0].log_softmax(1)?, ps))),
        ("sum", vec![m34(r)], Box::new(move |t, v| probe(t, v[0].sum(0)?, ps))),
        ("mean", vec![m34(r)], Box::new(move |t, v| probe(t, v[0].mean(1)?, ps))),
        ("sum_all", vec![m34(r)], Box::new(move |_, v| v[0].square()?.sum_all())),
        ("mean_all", vec![m34(r)], Box::new(move |_, v| v[0].square()?.mean_all())),
        (
            "concat",
            vec![m34(r), uniform(r, &[2, 4], -1.0, 1.0)],
            Box::new(move |t, v| probe(t, Var::concat(&[v[0], v[1]], 0)?, ps)),
        ),
        ("slice", vec![m34(r)], Box::new(move |t, v| probe(t, v[0].slice(1, 1, 3)?, ps))),
        ("reshape", vec![m34(r)], Box::new(move |t, v| probe(t, v[0].reshape([2, 6])?.square()?, ps))),
        (
            "embedding",
            vec![uniform(r, &[5, 3], -1.0, 1.0)],
            Box::new(move |t, v| probe(t, v[0].embedding(&[4, 0, 4, 2])?, ps)),
        ),
        (
            "masked_fill",
            vec![m34(r)],
            Box::new(move |t, v| {
                let mask: Vec<bool> = (0..12).map(|i| i % 3 == 0).collect();
                probe(t, v[0].masked_fill(&mask, -5.0)?.softmax(1)?, ps)
            }),
        ),
        (
            "layer_norm",
            vec![m34(r), uniform(r, &[4], 0.5, 1.5), uniform(r, &[4], -0.5, 0.5)],
            Box::new(move |t, v| probe(t, v[0].layer_norm(&v[1], &v[2], 1e-5)?, ps)),
        ),
        (
            "gather_rows",
            vec![m34(r)],
            Box::new(move |t, v| probe(t, v[0].log_softmax(1)?.gather_rows(&[3, 0, 1])?, ps)),
        ),
        (
            "kl_to_standard",
            vec![uniform(r, &[5], -1.0, 1.0), uniform(r, &[5], -1.0, 1.0)],
            Box::new(move |_, v| GaussianVar::new(v[0], v[1])?.kl_to_standard()),
        ),
        (
            "kl_between",
            vec![
                uniform(r, &[5], -1.0, 1.0),
                uniform(r, &[5], -1.0, 1.0),
                uniform(r, &[5], -1.0, 1.0),
                uniform(r, &[5], -1.0, 1.0),
            ],
            Box::new(move |_, v| GaussianVar::new(v[0], v[1])?.kl_between(&GaussianVar::new(v[2], v[3])?)),
        ),
    ];
    let mut rows = cases
        .into_iter()
        .map(|(name, inputs, f)| {
            let rep = grad_check_many(|t, v| f(t, v), &inputs, EPS, None)?;
            Ok(GradRow {
                name: name.into(),
                max_rel_err: rep.max_rel_err,
                checked: rep.checked,
                tolerance: OP_TOLERANCE,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.push(detach_check(&m34(r))?);
    Ok(rows)
}

/// Differences cannot see a stop-gradient, so this compares the analytic
/// gradient of `sum(x) + probe(detach(x))` with all ones.
fn detach_check(x: &Tensor) -> Result<GradRow> {
    let tape = Tape::new();
    let v = tape.param(x.clone());
    let y = v.sum_all()?.add(&probe(&tape, v.detach().square()?, 0)?)?;
    let g = tape.backward(y)?.wrt(v);
    let err = g.data().iter().map(|d| (d - 1.0).abs()).fold(0.0, f64::max);
    Ok(GradRow { name: "detach".into(), max_rel_err: err, checked: x.numel(), tolerance: OP_TOLERANCE })
}

fn as_tensor_err(e: impl std::fmt::Display) -> TensorError {
    TensorError::InvalidArgument(e.to_string())
}

/// Full objective gradients with respect to every parameter of a two
/// language micro model, for a complete sample and a partially missing one.
/// `max_coords` limits perturbed coordinates per parameter array.
pub fn loss_gradient_suite(seed: u64, max_coords: Option<usize>) -> Result<Vec<GradRow>> {
    let mut g = GenConfig::new(&["toyA", "toyB"], 12, derive(seed, "grad-corpus"));
    g.flag_len = 2;
    g.max_code_len = 14;
    g.missing_rates = vec![0.0, 0.5];
    let corpus = generate_corpus(&g).map_err(as_tensor_err)?;
    let pool = PreparedCorpus::new(&corpus, 2).map_err(as_tensor_err)?;
    let dims = ModelDims::micro(corpus.vocab.len(), 2);
    let params = ModelParams::init(&dims, derive(seed, "grad-init")).map_err(as_tensor_err)?;
    // differences would move a detached target too, so the check runs on
    // the undetached objective
    let cfg = LossConfig { detach_target: false, ..LossConfig::default() };
    let noise_seed = derive(seed, "grad-noise");
    let full = pool.samples.iter().find(|s| s.entries.iter().all(Option::is_some));
    let partial = pool.samples.iter().find(|s| s.entries.iter().any(Option::is_none));
    let mut rows = Vec::new();
    if let Some(sample) = full {
        let rep = grad_check_many(
            |t, v| {
                let net = Net::from_vars(t, &params, v.to_vec()).map_err(as_tensor_err)?;
                Ok(multi_parallel_objective(&net, sample, &cfg, noise_seed).map_err(as_tensor_err)?.0)
            },
            params.tensors(),
            EPS,
            max_coords,
        )?;
        rows.push(GradRow {
            name: "loss_multi_parallel".into(),
            max_rel_err: rep.max_rel_err,
            checked: rep.checked,
            tolerance: LOSS_TOLERANCE,
        });
    }
    if let Some(sample) = partial {
        let rep = grad_check_many(
            |t, v| {
                let net = Net::from_vars(t, &params, v.to_vec()).map_err(as_tensor_err)?;
                Ok(partial_objective(&net, sample, &pool, &cfg, noise_seed).map_err(as_tensor_err)?.0)
            },
            params.tensors(),
            EPS,
            max_coords,
        )?;
        rows.push(GradRow {
            name: "step_partially_missing".into(),
            max_rel_err: rep.max_rel_err,
            checked: rep.checked,
            tolerance: LOSS_TOLERANCE,
        });
    }
    if rows.len() != 2 {
        return Err(TensorError::InvalidArgument("micro corpus lacks a complete or a partial sample".into()));
    }
    Ok(rows)
}
