use super::{Result, TrainError};
use crate::model::ModelParams;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Learning rate falls linearly from `lr` to 0 over this many steps;
    /// `None` keeps it constant.
    pub total_steps: Option<u64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01, total_steps: None }
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, shapes: &[Tensor]) -> Self {
        let zeros = || shapes.iter().map(|t| vec![0.0; t.numel()]).collect();
        AdamW { cfg, m: zeros(), v: zeros(), step: 0 }
    }

    pub fn for_params(cfg: AdamWConfig, p: &ModelParams) -> Self {
        Self::new(cfg, p.tensors())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Learning rate used by the next update.
    pub fn current_lr(&self) -> f64 {
        match self.cfg.total_steps {
            Some(t) if t > 0 => self.cfg.lr * (1.0 - self.step as f64 / t as f64).max(0.0),
            _ => self.cfg.lr,
        }
    }

    /// Updates `params` in place from gradients in the same order.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(TrainError::ShapeMismatch(format!("param {:?} vs grad {:?}", p.shape(), g.shape())));
            }
        }
        let lr = self.current_lr();
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let decay = 1.0 - lr * c.weight_decay;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let mut vals = p.to_vec();
            for (j, x) in vals.iter_mut().enumerate() {
                let gj = g.data()[j];
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *x = *x * decay - lr * mhat / (vhat.sqrt() + c.eps);
            }
            *p = Tensor::new(p.shape().to_vec(), vals).map_err(crate::model::ModelError::from)?;
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor]) -> Result<()> {
        let mut ts = params.tensors().to_vec();
        self.update(&mut ts, grads)?;
        for (i, t) in ts.into_iter().enumerate() {
            params.set(i, t)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut p = vec![scalar(1.5)];
        let mut opt = AdamW::new(cfg, &p);
        opt.update(&mut p, &[scalar(0.0)]).unwrap();
        assert_eq!(p[0].data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() };
        let mut p = vec![scalar(1.0)];
        let mut opt = AdamW::new(cfg, &p);
        opt.update(&mut p, &[scalar(1.0)]).unwrap();
        assert!((p[0].data()[0] - 0.9).abs() < 1e-7, "{}", p[0].data()[0]);
    }

    #[test]
    fn decay_alone_shrinks_multiplicatively() {
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() };
        let mut p = vec![scalar(2.0)];
        let mut opt = AdamW::new(cfg, &p);
        opt.update(&mut p, &[scalar(0.0)]).unwrap();
        assert_eq!(p[0].data()[0], 2.0 * (1.0 - 0.1 * 0.5));
    }

    #[test]
    fn linear_schedule_reaches_zero() {
        let cfg = AdamWConfig { lr: 1.0, total_steps: Some(4), ..Default::default() };
        let mut p = vec![scalar(0.0)];
        let mut opt = AdamW::new(cfg, &p);
        let mut lrs = Vec::new();
        for _ in 0..5 {
            lrs.push(opt.current_lr());
            opt.update(&mut p, &[scalar(0.0)]).unwrap();
        }
        assert_eq!(lrs, vec![1.0, 0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![scalar(0.0)];
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        let g = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap();
        assert!(matches!(opt.update(&mut p, &[g]), Err(TrainError::ShapeMismatch(_))));
    }
}
