//! Diagonal Gaussian latents: reparameterized sampling, log-density and
//! closed-form KL divergences, as plain values and as tape expressions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{self, Var};

/// Log-variances are kept inside this range.
pub const LOG_VAR_MIN: f64 = -20.0;
pub const LOG_VAR_MAX: f64 = 20.0;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GaussianError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("log-variance {value} at index {index} outside [-20, 20]")]
    LogVarOutOfRange { index: usize, value: f64 },
    #[error("non-finite parameter at index {0}")]
    NonFinite(usize),
    #[error("sample count must be at least 1")]
    EmptySample,
}

pub type Result<T> = std::result::Result<T, GaussianError>;

/// N(mean, diag(exp(log_var))).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_var: Vec<f64>,
}

impl DiagGaussian {
    /// Builds a Gaussian, clamping log-variances into `[-20, 20]`.
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        Self::check(&mean, &log_var)?;
        let log_var = log_var.into_iter().map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)).collect();
        Ok(Self { mean, log_var })
    }

    /// Like [`DiagGaussian::new`] but rejects out-of-range log-variances.
    pub fn new_strict(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        Self::check(&mean, &log_var)?;
        if let Some((index, &value)) =
            log_var.iter().enumerate().find(|(_, v)| !(LOG_VAR_MIN..=LOG_VAR_MAX).contains(*v))
        {
            return Err(GaussianError::LogVarOutOfRange { index, value });
        }
        Ok(Self { mean, log_var })
    }

    fn check(mean: &[f64], log_var: &[f64]) -> Result<()> {
        if mean.len() != log_var.len() {
            return Err(GaussianError::DimMismatch { expected: mean.len(), got: log_var.len() });
        }
        if let Some(i) = mean.iter().chain(log_var).position(|v| !v.is_finite()) {
            return Err(GaussianError::NonFinite(i % mean.len().max(1)));
        }
        Ok(())
    }

    /// N(0, I).
    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], log_var: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    fn expect_dim(&self, got: usize) -> Result<()> {
        if got == self.dim() {
            Ok(())
        } else {
            Err(GaussianError::DimMismatch { expected: self.dim(), got })
        }
    }

    /// `mean + exp(log_var / 2) * noise`.
    pub fn reparameterize(&self, noise: &[f64]) -> Result<Vec<f64>> {
        self.expect_dim(noise.len())?;
        Ok(self.mean.iter().zip(&self.log_var).zip(noise).map(|((m, lv), e)| m + (0.5 * lv).exp() * e).collect())
    }

    /// KL(self || N(0, I)).
    pub fn kl_to_standard(&self) -> f64 {
        0.5 * self.mean.iter().zip(&self.log_var).map(|(m, lv)| m * m + lv.exp() - 1.0 - lv).sum::<f64>()
    }

    /// KL(self || other), both diagonal.
    pub fn kl_between(&self, other: &DiagGaussian) -> Result<f64> {
        self.expect_dim(other.dim())?;
        let mut total = 0.0;
        for d in 0..self.dim() {
            let (mq, lq) = (self.mean[d], self.log_var[d]);
            let (mr, lr) = (other.mean[d], other.log_var[d]);
            let diff = mq - mr;
            total += lr - lq + (lq.exp() + diff * diff) * (-lr).exp() - 1.0;
        }
        Ok(0.5 * total)
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        self.expect_dim(x.len())?;
        Ok(-0.5
            * self
                .mean
                .iter()
                .zip(&self.log_var)
                .zip(x)
                .map(|((m, lv), xv)| LN_2PI + lv + (xv - m) * (xv - m) * (-lv).exp())
                .sum::<f64>())
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> Vec<f64> {
        let noise: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
        self.reparameterize(&noise).expect("noise has matching dimension")
    }
}

/// Monte-Carlo estimate of KL(q || r) with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

pub fn mc_kl_estimate(q: &DiagGaussian, r: &DiagGaussian, n: usize, seed: u64) -> Result<McEstimate> {
    q.expect_dim(r.dim())?;
    if n == 0 {
        return Err(GaussianError::EmptySample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let x = q.sample(&mut rng);
        let v = q.log_prob(&x)? - r.log_prob(&x)?;
        sum += v;
        sum_sq += v * v;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = if n > 1 { (sum_sq - nf * mean * mean).max(0.0) / (nf - 1.0) } else { 0.0 };
    Ok(McEstimate { mean, stderr: (var / nf).sqrt() })
}

pub fn mc_kl(q: &DiagGaussian, r: &DiagGaussian, n: usize, seed: u64) -> Result<f64> {
    mc_kl_estimate(q, r, n, seed).map(|e| e.mean)
}

/// A diagonal Gaussian whose parameters live on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVar<'t> {
    pub mean: Var<'t>,
    pub log_var: Var<'t>,
}

impl<'t> GaussianVar<'t> {
    /// Clamps `log_var` into the supported range.
    pub fn new(mean: Var<'t>, log_var: Var<'t>) -> tensor::Result<Self> {
        if mean.shape() != log_var.shape() {
            return Err(tensor::TensorError::ShapeMismatch {
                op: "gaussian",
                detail: format!("mean {:?} vs log_var {:?}", mean.shape(), log_var.shape()),
            });
        }
        Ok(Self { mean, log_var: log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX)? })
    }

    pub fn to_value(&self) -> DiagGaussian {
        DiagGaussian { mean: self.mean.to_vec(), log_var: self.log_var.to_vec() }
    }

    /// `mean + exp(log_var / 2) * noise`, differentiable in both parameters.
    pub fn reparameterize(&self, noise: &[f64]) -> tensor::Result<Var<'t>> {
        let tape = self.mean.tape();
        let eps = tape.create(self.mean.shape(), noise.to_vec(), false)?;
        let std = self.log_var.scale(0.5)?.exp()?;
        self.mean.add(&std.mul(&eps)?)
    }

    pub fn kl_to_standard(&self) -> tensor::Result<Var<'t>> {
        let terms = self.mean.square()?.add(&self.log_var.exp()?)?.add_scalar(-1.0)?.sub(&self.log_var)?;
        terms.sum_all()?.scale(0.5)
    }

    pub fn kl_between(&self, other: &GaussianVar<'t>) -> tensor::Result<Var<'t>> {
        let diff = self.mean.sub(&other.mean)?;
        let ratio = self.log_var.exp()?.add(&diff.square()?)?.mul(&other.log_var.scale(-1.0)?.exp()?)?;
        let terms = other.log_var.sub(&self.log_var)?.add(&ratio)?.add_scalar(-1.0)?;
        terms.sum_all()?.scale(0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check_many, Tape, Tensor};

    fn g(mean: &[f64], log_var: &[f64]) -> DiagGaussian {
        DiagGaussian::new(mean.to_vec(), log_var.to_vec()).unwrap()
    }

    #[test]
    fn reparameterize_examples() {
        let q = g(&[1.0, -2.0], &[0.3, 0.1]);
        assert_eq!(q.reparameterize(&[0.0, 0.0]).unwrap(), vec![1.0, -2.0]);
        let s = DiagGaussian::standard(3);
        assert_eq!(s.reparameterize(&[0.5, -1.0, 2.0]).unwrap(), vec![0.5, -1.0, 2.0]);
        let q = g(&[1.0], &[4f64.ln()]);
        assert!((q.reparameterize(&[0.5]).unwrap()[0] - 2.0).abs() < 1e-15);
        assert!(matches!(q.reparameterize(&[0.0, 1.0]), Err(GaussianError::DimMismatch { .. })));
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(DiagGaussian::standard(4).kl_to_standard(), 0.0);
        assert!((g(&[1.0], &[0.0]).kl_to_standard() - 0.5).abs() < 1e-15);
        // 0.5 * (4 - 1 - ln 4)
        let expected = 0.5 * (4.0 - 1.0 - 4f64.ln());
        assert!((g(&[0.0], &[4f64.ln()]).kl_to_standard() - expected).abs() < 1e-15);
        assert!((expected - 0.806853).abs() < 1e-6);

        let q = g(&[1.0], &[0.0]);
        let r = DiagGaussian::standard(1);
        assert_eq!(q.kl_between(&r).unwrap(), 0.5);
        assert_eq!(q.kl_between(&q).unwrap(), 0.0);
        let q2 = g(&[0.0], &[2f64.ln()]);
        assert!((q2.kl_between(&r).unwrap() - 0.5 * (2.0 - 1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((q2.kl_between(&r).unwrap() - 0.153426).abs() < 1e-6);
    }

    #[test]
    fn strict_mode_rejects_clamping() {
        assert!(DiagGaussian::new_strict(vec![0.0], vec![25.0]).is_err());
        let clamped = DiagGaussian::new(vec![0.0], vec![25.0]).unwrap();
        assert_eq!(clamped.log_var(), &[20.0]);
    }

    #[test]
    fn log_prob_at_mode() {
        let s = DiagGaussian::standard(2);
        assert!((s.log_prob(&[0.0, 0.0]).unwrap() + LN_2PI).abs() < 1e-15);
    }

    #[test]
    fn mc_kl_of_identical_is_near_zero() {
        let q = g(&[0.4, -1.0], &[0.2, -0.5]);
        let e = mc_kl_estimate(&q, &q, 10_000, 3).unwrap();
        assert!(e.mean.abs() <= 3.0 * e.stderr + 1e-12);
    }

    #[test]
    fn tape_kl_matches_value_kl() {
        let tape = Tape::new();
        let mq = tape.create(vec![3], vec![0.3, -1.2, 0.8], true).unwrap();
        let lq = tape.create(vec![3], vec![0.1, -0.4, 1.3], true).unwrap();
        let mr = tape.create(vec![3], vec![-0.5, 0.2, 0.0], true).unwrap();
        let lr = tape.create(vec![3], vec![0.7, 0.0, -1.0], true).unwrap();
        let q = GaussianVar::new(mq, lq).unwrap();
        let r = GaussianVar::new(mr, lr).unwrap();
        let kl = q.kl_between(&r).unwrap().item();
        assert!((kl - q.to_value().kl_between(&r.to_value()).unwrap()).abs() < 1e-12);
        let kls = q.kl_to_standard().unwrap().item();
        assert!((kls - q.to_value().kl_to_standard()).abs() < 1e-12);
    }

    #[test]
    fn kl_gradients_pass_finite_differences() {
        let inputs = vec![
            Tensor::vector(vec![0.3, -1.2]).unwrap(),
            Tensor::vector(vec![0.1, -0.4]).unwrap(),
            Tensor::vector(vec![-0.5, 0.2]).unwrap(),
            Tensor::vector(vec![0.7, 0.0]).unwrap(),
        ];
        let r = grad_check_many(
            |_, v| GaussianVar::new(v[0], v[1])?.kl_between(&GaussianVar::new(v[2], v[3])?),
            &inputs,
            1e-5,
            None,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
        let r =
            grad_check_many(|_, v| GaussianVar::new(v[0], v[1])?.kl_to_standard(), &inputs[..2], 1e-5, None).unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }
}
