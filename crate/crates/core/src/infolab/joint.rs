use super::{InfoError, Result};

/// Exact probability table over named finite variables.
///
/// Outcomes are stored row-major over `variables` in declaration order
/// (the last variable varies fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    names: Vec<String>,
    sizes: Vec<usize>,
    table: Vec<f64>,
}

/// Normalization tolerance on the table sum.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// Products with more factors than this are accumulated in log space.
pub const LOG_SPACE_THRESHOLD: usize = 30;

/// Product of probabilities; long products are taken as exp(sum of logs).
pub fn probability_product(factors: &[f64]) -> f64 {
    if factors.len() > LOG_SPACE_THRESHOLD {
        log_space_product(factors)
    } else {
        factors.iter().product()
    }
}

pub(crate) fn log_space_product(factors: &[f64]) -> f64 {
    if factors.contains(&0.0) {
        return 0.0;
    }
    factors.iter().map(|f| f.ln()).sum::<f64>().exp()
}

/// `-p ln p` with the convention `0 ln 0 = 0`.
pub(crate) fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.ln()
    } else {
        0.0
    }
}

impl DiscreteJoint {
    pub fn new(variables: Vec<(String, usize)>, table: Vec<f64>) -> Result<Self> {
        let (names, sizes): (Vec<String>, Vec<usize>) = variables.into_iter().unzip();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(InfoError::InvalidDistribution(format!("duplicate variable {n}")));
            }
        }
        let expected: usize = sizes.iter().product();
        if table.len() != expected {
            return Err(InfoError::InvalidDistribution(format!(
                "table has {} entries, variables need {expected}",
                table.len()
            )));
        }
        if let Some(p) = table.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(InfoError::InvalidDistribution(format!("invalid probability {p}")));
        }
        let sum: f64 = table.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(InfoError::InvalidDistribution(format!("table sums to {sum}")));
        }
        Ok(Self { names, sizes, table })
    }

    pub fn variables(&self) -> impl Iterator<Item = (&str, usize)> {
        self.names.iter().map(String::as_str).zip(self.sizes.iter().copied())
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|n| n == name).ok_or_else(|| InfoError::UnknownVariable(name.to_string()))
    }

    fn indices(&self, vars: &[&str]) -> Result<Vec<usize>> {
        vars.iter().map(|v| self.index_of(v)).collect()
    }

    /// Marginal table over `vars`, in the order given.
    pub fn marginal(&self, vars: &[&str]) -> Result<DiscreteJoint> {
        let idx = self.indices(vars)?;
        let table = self.marginal_table(&idx);
        Ok(DiscreteJoint {
            names: idx.iter().map(|&i| self.names[i].clone()).collect(),
            sizes: idx.iter().map(|&i| self.sizes[i]).collect(),
            table,
        })
    }

    fn marginal_table(&self, idx: &[usize]) -> Vec<f64> {
        let out_sizes: Vec<usize> = idx.iter().map(|&i| self.sizes[i]).collect();
        let mut out = vec![0.0; out_sizes.iter().product()];
        let mut digits = vec![0usize; self.sizes.len()];
        for &p in &self.table {
            let mut o = 0;
            for (k, &i) in idx.iter().enumerate() {
                o = o * out_sizes[k] + digits[i];
            }
            out[o] += p;
            // odometer increment, last variable fastest
            for d in (0..digits.len()).rev() {
                digits[d] += 1;
                if digits[d] < self.sizes[d] {
                    break;
                }
                digits[d] = 0;
            }
        }
        out
    }

    /// Shannon entropy (nats) of the marginal over `vars`; empty set gives 0.
    pub fn entropy(&self, vars: &[&str]) -> Result<f64> {
        let idx = self.indices(vars)?;
        Ok(self.marginal_table(&idx).into_iter().map(plogp).sum())
    }

    /// I(A;B) = H(A) + H(B) - H(A,B).
    pub fn mutual_information(&self, a: &[&str], b: &[&str]) -> Result<f64> {
        disjoint(&[a, b])?;
        let ab = concat(&[a, b]);
        Ok(self.entropy(a)? + self.entropy(b)? - self.entropy(&ab)?)
    }

    /// I(A;B|C) = H(A,C) + H(B,C) - H(A,B,C) - H(C).
    pub fn conditional_mi(&self, a: &[&str], b: &[&str], c: &[&str]) -> Result<f64> {
        disjoint(&[a, b, c])?;
        Ok(self.entropy(&concat(&[a, c]))? + self.entropy(&concat(&[b, c]))?
            - self.entropy(&concat(&[a, b, c]))?
            - self.entropy(c)?)
    }

    /// I(A;B;C) = I(A;C) - I(A;C|B). Negative under synergy.
    pub fn interaction_information(&self, a: &[&str], b: &[&str], c: &[&str]) -> Result<f64> {
        disjoint(&[a, b, c])?;
        Ok(self.mutual_information(a, c)? - self.conditional_mi(a, c, b)?)
    }

    /// The same quantity by inclusion-exclusion over joint entropies.
    pub fn interaction_information_by_entropies(&self, a: &[&str], b: &[&str], c: &[&str]) -> Result<f64> {
        disjoint(&[a, b, c])?;
        Ok(self.entropy(a)? + self.entropy(b)? + self.entropy(c)?
            - self.entropy(&concat(&[a, b]))?
            - self.entropy(&concat(&[a, c]))?
            - self.entropy(&concat(&[b, c]))?
            + self.entropy(&concat(&[a, b, c]))?)
    }
}

fn concat<'a>(sets: &[&[&'a str]]) -> Vec<&'a str> {
    sets.iter().flat_map(|s| s.iter().copied()).collect()
}

fn disjoint(sets: &[&[&str]]) -> Result<()> {
    let all = concat(sets);
    for (i, v) in all.iter().enumerate() {
        if all[..i].contains(v) {
            return Err(InfoError::OverlappingSets(v.to_string()));
        }
    }
    Ok(())
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn vars(spec: &[(&str, usize)]) -> Vec<(String, usize)> {
        spec.iter().map(|(n, s)| (n.to_string(), *s)).collect()
    }

    /// A, B iid fair bits and C = A xor B.
    fn xor_triple() -> DiscreteJoint {
        let mut t = vec![0.0; 8];
        for a in 0..2 {
            for b in 0..2 {
                t[a * 4 + b * 2 + (a ^ b)] = 0.25;
            }
        }
        DiscreteJoint::new(vars(&[("A", 2), ("B", 2), ("C", 2)]), t).unwrap()
    }

    #[test]
    fn entropy_examples() {
        let u = DiscreteJoint::new(vars(&[("U", 4)]), vec![0.25; 4]).unwrap();
        assert!((u.entropy(&["U"]).unwrap() - 4f64.ln()).abs() < 1e-15);
        let pm = DiscreteJoint::new(vars(&[("P", 3)]), vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(pm.entropy(&["P"]).unwrap(), 0.0);
        let p = DiscreteJoint::new(vars(&[("P", 3)]), vec![0.5, 0.25, 0.25]).unwrap();
        assert!((p.entropy(&["P"]).unwrap() - 1.5 * LN_2).abs() < 1e-15);
        assert!(matches!(p.entropy(&["Q"]), Err(InfoError::UnknownVariable(_))));
    }

    #[test]
    fn mutual_information_examples() {
        let indep = DiscreteJoint::new(vars(&[("A", 2), ("B", 2)]), vec![0.25; 4]).unwrap();
        assert!(indep.mutual_information(&["A"], &["B"]).unwrap().abs() < 1e-15);
        let copy = DiscreteJoint::new(vars(&[("A", 2), ("B", 2)]), vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!((copy.mutual_information(&["A"], &["B"]).unwrap() - LN_2).abs() < 1e-15);
        let x = xor_triple();
        assert!(x.mutual_information(&["A"], &["C"]).unwrap().abs() < 1e-15);
        assert!((x.conditional_mi(&["A"], &["C"], &["B"]).unwrap() - LN_2).abs() < 1e-15);
        assert!(matches!(x.mutual_information(&["A", "B"], &["B"]), Err(InfoError::OverlappingSets(_))));
    }

    #[test]
    fn interaction_information_examples() {
        let indep = DiscreteJoint::new(vars(&[("A", 2), ("B", 2), ("C", 2)]), vec![0.125; 8]).unwrap();
        assert!(indep.interaction_information(&["A"], &["B"], &["C"]).unwrap().abs() < 1e-15);
        let x = xor_triple();
        assert!((x.interaction_information(&["A"], &["B"], &["C"]).unwrap() + LN_2).abs() < 1e-15);
        let mut t = vec![0.0; 8];
        t[0] = 0.5;
        t[7] = 0.5;
        let same = DiscreteJoint::new(vars(&[("A", 2), ("B", 2), ("C", 2)]), t).unwrap();
        assert!((same.interaction_information(&["A"], &["B"], &["C"]).unwrap() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn rejects_unnormalized_tables() {
        assert!(DiscreteJoint::new(vars(&[("A", 2)]), vec![0.5, 0.6]).is_err());
        assert!(DiscreteJoint::new(vars(&[("A", 2)]), vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn log_space_product_matches_linear() {
        let f = [0.3, 0.9, 0.55, 0.71, 0.12];
        let lin: f64 = f.iter().product();
        assert!((log_space_product(&f) - lin).abs() < 1e-12);
        let long = vec![0.97; 40];
        assert!((probability_product(&long) - 0.97f64.powi(40)).abs() < 1e-12);
    }

    #[test]
    fn bits_conversion() {
        assert!((nats_to_bits(LN_2) - 1.0).abs() < 1e-15);
    }
}
