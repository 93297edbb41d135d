use super::store::ParameterStore;
use super::NumericError;

/// Adam with bias correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn new(lr: f64) -> Result<Self, NumericError> {
        let adam = Self {
            lr,
            ..Self::default()
        };
        adam.validate()?;
        Ok(adam)
    }

    fn validate(&self) -> Result<(), NumericError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(NumericError::InvalidOptimizer(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(NumericError::InvalidOptimizer("betas must lie in [0, 1)".into()));
        }
        if self.eps <= 0.0 {
            return Err(NumericError::InvalidOptimizer("eps must be positive".into()));
        }
        Ok(())
    }

    /// Apply one update to every parameter, then zero the gradients.
    pub fn step(&self, store: &mut ParameterStore) -> Result<(), NumericError> {
        self.validate()?;
        for (_, e) in store.iter_mut() {
            e.step += 1;
            let t = e.step as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let grad = e.grad.data_mut();
            let (m, v, p) = (e.m.data_mut(), e.v.data_mut(), e.value.data_mut());
            for i in 0..p.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                grad[i] = 0.0;
            }
        }
        Ok(())
    }
}
