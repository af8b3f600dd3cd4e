/// Components of one evaluation of the objective. Per-language vectors are
/// indexed by language id.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    /// Translation cross-entropy per target; `None` where no target was scored.
    pub ce: Vec<Option<f64>>,
    /// Flag reconstruction error; `None` where nothing was reconstructed.
    pub mse: Vec<Option<f64>>,
    pub kl_specific: Vec<f64>,
    pub kl_shared: f64,
    pub kl_shift: Vec<f64>,
    pub lambda: f64,
    pub mse_weight: f64,
    pub total: f64,
}

fn sum_opt(v: &[Option<f64>]) -> f64 {
    v.iter().flatten().fold(0.0, |a, b| a + b)
}

fn sum(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a + b)
}

impl LossBreakdown {
    pub fn ce_sum(&self) -> f64 {
        sum_opt(&self.ce)
    }

    pub fn mse_sum(&self) -> f64 {
        sum_opt(&self.mse)
    }

    pub fn kl_specific_sum(&self) -> f64 {
        sum(&self.kl_specific)
    }

    pub fn kl_shift_sum(&self) -> f64 {
        sum(&self.kl_shift)
    }

    /// Total rebuilt from the stored components in the order the loss uses.
    pub fn recompose(&self) -> f64 {
        self.total_at(self.lambda)
    }

    /// Total the same components would give under another trade-off weight.
    pub fn total_at(&self, lambda: f64) -> f64 {
        let a = 1.0 + lambda;
        let recon = (self.ce_sum() + self.mse_sum() * self.mse_weight) * a;
        let spec = self.kl_specific_sum() * a;
        recon + spec + self.kl_shared + self.kl_shift_sum() * lambda
    }

    /// d total / d lambda at fixed components.
    pub fn lambda_slope(&self) -> f64 {
        self.ce_sum() + self.mse_sum() * self.mse_weight + self.kl_specific_sum() + self.kl_shift_sum()
    }

    pub(crate) fn zeros(n: usize, lambda: f64, mse_weight: f64) -> Self {
        LossBreakdown {
            ce: vec![None; n],
            mse: vec![None; n],
            kl_specific: vec![0.0; n],
            kl_shared: 0.0,
            kl_shift: vec![0.0; n],
            lambda,
            mse_weight,
            total: 0.0,
        }
    }
}
