use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use super::joint::{probability_product, DiscreteJoint};
use super::{InfoError, Result};

/// Largest joint outcome count the verifier will enumerate.
pub const MAX_ENUMERATION: usize = 1_000_000;

const ROW_TOLERANCE: f64 = 1e-12;

/// A finite surrogate of the multilingual generative/inference pair.
///
/// Observables `X1..XN`, language-specific latents `Z1..ZN` and one shared
/// latent `Zs`. The inference side factorizes as
/// `q(z1|x1) ... q(zN|xN) q(zs|x1..xN)`; the generative side as
/// `p(zs) prod_i p(zi) p(xi|zi,zs)`.
///
/// Conditional tables are row-major with the conditioning outcome first.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredModel {
    pub x_sizes: Vec<usize>,
    pub z_sizes: Vec<usize>,
    pub zs_size: usize,
    /// p_D over the joint of `X1..XN`.
    pub data: Vec<f64>,
    /// `q(zi|xi)`: `[xi][zi]` per language.
    pub q_specific: Vec<Vec<f64>>,
    /// `q(zs|x1..xN)`: `[x][zs]`.
    pub q_shared: Vec<f64>,
    /// `r^i(zs|xi)`: `[xi][zs]` per language.
    pub r_shift: Vec<Vec<f64>>,
    /// `r^i(zs|x-bar-i)`, conditioned on all other observables: `[x-bar][zs]`.
    pub r_complement: Vec<Vec<f64>>,
    pub prior_specific: Vec<Vec<f64>>,
    pub prior_shared: Vec<f64>,
    /// `p(xi|zi,zs)`: `[zi][zs][xi]` per language.
    pub likelihood: Vec<Vec<f64>>,
}

fn dirichlet_row(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / sum).collect()
}

fn dirichlet_rows(rng: &mut impl Rng, rows: usize, n: usize) -> Vec<f64> {
    (0..rows).flat_map(|_| dirichlet_row(rng, n)).collect()
}

fn check_rows(name: &str, table: &[f64], rows: usize, width: usize) -> Result<()> {
    if table.len() != rows * width {
        return Err(InfoError::InvalidModel(format!("{name}: expected {} entries, got {}", rows * width, table.len())));
    }
    for (r, row) in table.chunks(width.max(1)).enumerate() {
        if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(InfoError::InvalidModel(format!("{name}: invalid entry in row {r}")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_TOLERANCE {
            return Err(InfoError::InvalidModel(format!("{name}: row {r} sums to {s}")));
        }
    }
    Ok(())
}

pub fn x_name(i: usize) -> String {
    format!("X{}", i + 1)
}

pub fn z_name(i: usize) -> String {
    format!("Z{}", i + 1)
}

pub const ZS: &str = "Zs";

impl FactoredModel {
    /// Random model with every table row drawn from a flat Dirichlet.
    /// Alphabet sizes are drawn uniformly from `2..=max_alphabet`.
    pub fn random(seed: u64, n_langs: usize, max_alphabet: usize) -> Result<Self> {
        if n_langs < 1 || max_alphabet < 1 {
            return Err(InfoError::InvalidModel("need at least one language and alphabet size 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = 2.min(max_alphabet);
        let size = |rng: &mut ChaCha8Rng| rng.random_range(lo..=max_alphabet);
        let x_sizes: Vec<usize> = (0..n_langs).map(|_| size(&mut rng)).collect();
        let z_sizes: Vec<usize> = (0..n_langs).map(|_| size(&mut rng)).collect();
        let zs_size = size(&mut rng);
        Self::random_with_sizes(&mut rng, x_sizes, z_sizes, zs_size)
    }

    pub fn random_with_sizes(
        rng: &mut impl Rng,
        x_sizes: Vec<usize>,
        z_sizes: Vec<usize>,
        zs_size: usize,
    ) -> Result<Self> {
        let n = x_sizes.len();
        if z_sizes.len() != n {
            return Err(InfoError::InvalidModel("x_sizes and z_sizes differ in length".into()));
        }
        let nx: usize = x_sizes.iter().product();
        let data = dirichlet_row(rng, nx);
        let q_specific = (0..n).map(|i| dirichlet_rows(rng, x_sizes[i], z_sizes[i])).collect();
        let q_shared = dirichlet_rows(rng, nx, zs_size);
        let r_shift = (0..n).map(|i| dirichlet_rows(rng, x_sizes[i], zs_size)).collect();
        let r_complement = (0..n).map(|i| dirichlet_rows(rng, nx / x_sizes[i], zs_size)).collect();
        let prior_specific = (0..n).map(|i| dirichlet_row(rng, z_sizes[i])).collect();
        let prior_shared = dirichlet_row(rng, zs_size);
        let likelihood = (0..n).map(|i| dirichlet_rows(rng, z_sizes[i] * zs_size, x_sizes[i])).collect();
        let m = Self {
            x_sizes,
            z_sizes,
            zs_size,
            data,
            q_specific,
            q_shared,
            r_shift,
            r_complement,
            prior_specific,
            prior_shared,
            likelihood,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn n_langs(&self) -> usize {
        self.x_sizes.len()
    }

    pub fn x_count(&self) -> usize {
        self.x_sizes.iter().product()
    }

    pub fn z_count(&self) -> usize {
        self.z_sizes.iter().product::<usize>() * self.zs_size
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_langs();
        let lens = [
            self.z_sizes.len(),
            self.q_specific.len(),
            self.r_shift.len(),
            self.r_complement.len(),
            self.prior_specific.len(),
            self.likelihood.len(),
        ];
        if n == 0 || lens.iter().any(|l| *l != n) {
            return Err(InfoError::InvalidModel("per-language table counts disagree".into()));
        }
        if self.x_sizes.iter().chain(&self.z_sizes).any(|s| *s == 0) || self.zs_size == 0 {
            return Err(InfoError::InvalidModel("zero-sized alphabet".into()));
        }
        let nx = self.x_count();
        check_rows("data", &self.data, 1, nx)?;
        check_rows("q_shared", &self.q_shared, nx, self.zs_size)?;
        check_rows("prior_shared", &self.prior_shared, 1, self.zs_size)?;
        for i in 0..n {
            check_rows("q_specific", &self.q_specific[i], self.x_sizes[i], self.z_sizes[i])?;
            check_rows("r_shift", &self.r_shift[i], self.x_sizes[i], self.zs_size)?;
            check_rows("r_complement", &self.r_complement[i], nx / self.x_sizes[i], self.zs_size)?;
            check_rows("prior_specific", &self.prior_specific[i], 1, self.z_sizes[i])?;
            check_rows("likelihood", &self.likelihood[i], self.z_sizes[i] * self.zs_size, self.x_sizes[i])?;
        }
        Ok(())
    }

    pub(crate) fn check_enumerable(&self) -> Result<()> {
        let total = self.x_count().saturating_mul(self.z_count());
        if total > MAX_ENUMERATION {
            return Err(InfoError::TooLargeToEnumerate(total));
        }
        Ok(())
    }

    /// Per-language digits of a joint observable index.
    pub(crate) fn x_digits(&self, mut idx: usize) -> Vec<usize> {
        let mut d = vec![0; self.n_langs()];
        for i in (0..self.n_langs()).rev() {
            d[i] = idx % self.x_sizes[i];
            idx /= self.x_sizes[i];
        }
        d
    }

    pub(crate) fn z_digits(&self, mut idx: usize) -> (Vec<usize>, usize) {
        let s = idx % self.zs_size;
        idx /= self.zs_size;
        let mut d = vec![0; self.n_langs()];
        for i in (0..self.n_langs()).rev() {
            d[i] = idx % self.z_sizes[i];
            idx /= self.z_sizes[i];
        }
        (d, s)
    }

    /// Index of the observables other than `i`.
    pub(crate) fn complement_index(&self, x: &[usize], i: usize) -> usize {
        let mut idx = 0;
        for (j, &xj) in x.iter().enumerate() {
            if j != i {
                idx = idx * self.x_sizes[j] + xj;
            }
        }
        idx
    }

    pub(crate) fn q_specific_at(&self, i: usize, xi: usize, zi: usize) -> f64 {
        self.q_specific[i][xi * self.z_sizes[i] + zi]
    }

    pub(crate) fn q_shared_at(&self, x: usize, s: usize) -> f64 {
        self.q_shared[x * self.zs_size + s]
    }

    pub(crate) fn likelihood_at(&self, i: usize, zi: usize, s: usize, xi: usize) -> f64 {
        self.likelihood[i][(zi * self.zs_size + s) * self.x_sizes[i] + xi]
    }

    /// q(z1..zN, zs | x) for joint indices.
    pub(crate) fn q_latent(&self, x: usize, xd: &[usize], zd: &[usize], s: usize) -> f64 {
        let mut f: Vec<f64> = (0..self.n_langs()).map(|i| self.q_specific_at(i, xd[i], zd[i])).collect();
        f.push(self.q_shared_at(x, s));
        probability_product(&f)
    }

    /// p(x, z1..zN, zs) under the generative model.
    pub(crate) fn p_joint(&self, xd: &[usize], zd: &[usize], s: usize) -> f64 {
        let mut f = vec![self.prior_shared[s]];
        for i in 0..self.n_langs() {
            f.push(self.prior_specific[i][zd[i]]);
            f.push(self.likelihood_at(i, zd[i], s, xd[i]));
        }
        probability_product(&f)
    }

    /// Joint of p_D with the factorized inference tables, over
    /// `X1..XN, Z1..ZN, Zs` in that order.
    pub fn inference_joint(&self) -> Result<DiscreteJoint> {
        self.check_enumerable()?;
        let nx = self.x_count();
        let nz = self.z_count();
        let mut table = Vec::with_capacity(nx * nz);
        for x in 0..nx {
            let xd = self.x_digits(x);
            for z in 0..nz {
                let (zd, s) = self.z_digits(z);
                table.push(self.data[x] * self.q_latent(x, &xd, &zd, s));
            }
        }
        // summation noise from Dirichlet rows stays far below the tolerance
        let variables = (0..self.n_langs())
            .map(|i| (x_name(i), self.x_sizes[i]))
            .chain((0..self.n_langs()).map(|i| (z_name(i), self.z_sizes[i])))
            .chain(std::iter::once((ZS.to_string(), self.zs_size)))
            .collect();
        DiscreteJoint::new(variables, table)
    }

    /// Sets `r_complement[i]` to the exact `q(zs | x-bar-i)` under p_D.
    pub fn match_complement_to_marginal(&mut self) {
        let nx = self.x_count();
        for i in 0..self.n_langs() {
            let rows = nx / self.x_sizes[i];
            let mut acc = vec![0.0; rows * self.zs_size];
            let mut mass = vec![0.0; rows];
            for x in 0..nx {
                let xd = self.x_digits(x);
                let c = self.complement_index(&xd, i);
                mass[c] += self.data[x];
                for s in 0..self.zs_size {
                    acc[c * self.zs_size + s] += self.data[x] * self.q_shared_at(x, s);
                }
            }
            for c in 0..rows {
                for s in 0..self.zs_size {
                    let v = &mut acc[c * self.zs_size + s];
                    *v = if mass[c] > 0.0 { *v / mass[c] } else { 1.0 / self.zs_size as f64 };
                }
            }
            self.r_complement[i] = acc;
        }
    }

    /// Replaces the inference tables by the exact generative posterior.
    /// Fails when that posterior does not factorize like the inference side.
    pub fn match_posterior(&mut self) -> Result<()> {
        self.check_enumerable()?;
        let n = self.n_langs();
        let nx = self.x_count();
        let nz = self.z_count();
        let mut q_specific: Vec<Vec<Option<Vec<f64>>>> = (0..n).map(|i| vec![None; self.x_sizes[i]]).collect();
        let mut q_shared = vec![0.0; nx * self.zs_size];
        for x in 0..nx {
            let xd = self.x_digits(x);
            let joint: Vec<f64> = (0..nz)
                .map(|z| {
                    let (zd, s) = self.z_digits(z);
                    self.p_joint(&xd, &zd, s)
                })
                .collect();
            let px: f64 = joint.iter().sum();
            let post: Vec<f64> = joint.iter().map(|p| p / px).collect();
            let mut marg: Vec<Vec<f64>> = (0..n).map(|i| vec![0.0; self.z_sizes[i]]).collect();
            let mut marg_s = vec![0.0; self.zs_size];
            for (z, p) in post.iter().enumerate() {
                let (zd, s) = self.z_digits(z);
                for i in 0..n {
                    marg[i][zd[i]] += p;
                }
                marg_s[s] += p;
            }
            for (z, p) in post.iter().enumerate() {
                let (zd, s) = self.z_digits(z);
                let mut f: Vec<f64> = (0..n).map(|i| marg[i][zd[i]]).collect();
                f.push(marg_s[s]);
                if (probability_product(&f) - p).abs() > 1e-12 {
                    return Err(InfoError::InvalidModel("posterior does not factorize".into()));
                }
            }
            for i in 0..n {
                match &q_specific[i][xd[i]] {
                    Some(prev) if prev.iter().zip(&marg[i]).any(|(a, b)| (a - b).abs() > 1e-12) => {
                        return Err(InfoError::InvalidModel(format!(
                            "posterior over Z{} depends on other observables",
                            i + 1
                        )));
                    }
                    Some(_) => {}
                    None => q_specific[i][xd[i]] = Some(marg[i].clone()),
                }
            }
            q_shared[x * self.zs_size..(x + 1) * self.zs_size].copy_from_slice(&marg_s);
        }
        self.q_specific = q_specific
            .into_iter()
            .map(|rows| rows.into_iter().flat_map(|r| r.expect("every outcome visited")).collect())
            .collect();
        self.q_shared = q_shared;
        Ok(())
    }

    /// Makes every likelihood ignore its language-specific latent by copying
    /// the `zi = 0` row across all `zi`.
    pub fn drop_specific_dependence(&mut self) {
        for i in 0..self.n_langs() {
            let width = self.zs_size * self.x_sizes[i];
            let base = self.likelihood[i][..width].to_vec();
            for zi in 1..self.z_sizes[i] {
                self.likelihood[i][zi * width..(zi + 1) * width].copy_from_slice(&base);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_models_are_valid_and_reproducible() {
        let a = FactoredModel::random(11, 3, 3).unwrap();
        let b = FactoredModel::random(11, 3, 3).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        let j = a.inference_joint().unwrap();
        assert!((j.table().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_rows_rejected() {
        let mut m = FactoredModel::random(2, 2, 2).unwrap();
        m.q_shared[0] += 0.1;
        assert!(matches!(m.validate(), Err(InfoError::InvalidModel(_))));
    }

    #[test]
    fn posterior_matching_needs_factorizing_posterior() {
        let mut m = FactoredModel::random(5, 2, 3).unwrap();
        assert!(m.clone().match_posterior().is_err());
        m.drop_specific_dependence();
        m.match_posterior().unwrap();
        m.validate().unwrap();
    }

    #[test]
    fn enumeration_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = FactoredModel::random_with_sizes(&mut rng, vec![10, 10, 10], vec![10, 10, 10], 2).unwrap();
        assert!(matches!(m.inference_joint(), Err(InfoError::TooLargeToEnumerate(_))));
    }
}
