//! Central finite-difference checks of tape gradients.

use super::{Result, Tape, Tensor, TensorError, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over checked components of |analytic - numeric| / max(1, |analytic|)
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Checks `f` at `x`. See [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor, epsilon: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let report = grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), epsilon, None)?;
    Ok(report.max_rel_err)
}

/// Compares analytic gradients of the scalar `f(inputs)` against central
/// differences. When `max_coords` is set, a deterministic evenly spaced
/// subset of at most that many coordinates per input is perturbed.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], epsilon: f64, max_coords: Option<usize>) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(TensorError::InvalidArgument(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let y = f(&tape, &vars)?;
        let v = y.value();
        v.item().ok_or_else(|| TensorError::NotScalar(v.shape().to_vec()))
    };

    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let y = f(&tape, &vars)?;
        let g = tape.backward(y)?;
        vars.iter().map(|v| g.wrt(*v)).collect()
    };

    let base_a = eval(inputs)?;
    let base_b = eval(inputs)?;
    if base_a.to_bits() != base_b.to_bits() {
        return Err(TensorError::NonDeterministicFunction);
    }

    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    for (which, x) in inputs.iter().enumerate() {
        let n = x.numel();
        let stride = match max_coords {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for idx in (0..n).step_by(stride) {
            let perturbed = |delta: f64| -> Result<f64> {
                let mut xs = inputs.to_vec();
                let mut vals = x.to_vec();
                vals[idx] += delta;
                xs[which] = Tensor::new(x.shape().to_vec(), vals)?;
                eval(&xs)
            };
            let numeric = (perturbed(epsilon)? - perturbed(-epsilon)?) / (2.0 * epsilon);
            let a = analytic[which].data()[idx];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            max_rel_err = max_rel_err.max(err);
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_err, checked })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let err = grad_check(|_, x| x.square()?.sum_all(), &x, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn epsilon_range_enforced() {
        let x = Tensor::new(vec![1], vec![1.0]).unwrap();
        assert!(grad_check(|_, x| x.sum_all(), &x, 1e-2).is_err());
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let z = Tensor::new(vec![1, 4], vec![0.3, -1.1, 2.0, 0.5]).unwrap();
        let k = 2;
        let tape = Tape::new();
        let zv = tape.param(z.clone());
        let loss = zv.log_softmax(1).unwrap().gather_rows(&[k]).unwrap().sum_all().unwrap().scale(-1.0).unwrap();
        let g = tape.backward(loss).unwrap().wrt(zv);
        let t2 = Tape::new();
        let p = t2.constant(z.clone()).softmax(1).unwrap().to_vec();
        for (j, (gv, pv)) in g.data().iter().zip(&p).enumerate() {
            let expected = pv - if j == k { 1.0 } else { 0.0 };
            assert!((gv - expected).abs() < 1e-12);
        }
        let err = grad_check(|_, z| z.log_softmax(1)?.gather_rows(&[k])?.sum_all()?.scale(-1.0), &z, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
