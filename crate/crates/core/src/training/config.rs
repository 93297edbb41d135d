use std::path::PathBuf;

use super::TrainingError;

/// Optimizer and loop settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Weight of the KL term in the objective. Reported NELBO is always
    /// `kl + recon` regardless.
    pub kl_weight: f64,
    /// L1 weight on `sum sigma` for MADE training.
    pub sigma_l1_weight: f64,
    /// Checkpoint period in epochs; 0 writes only the final checkpoint.
    pub eval_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Fraction of clouds held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 8,
            epochs: 100,
            seed: 0,
            kl_weight: 1.0,
            sigma_l1_weight: 0.01,
            eval_every: 10,
            checkpoint_dir: None,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: &str| Err(TrainingError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return bad("kl_weight must be nonnegative");
        }
        if !(self.sigma_l1_weight >= 0.0 && self.sigma_l1_weight.is_finite()) {
            return bad("sigma_l1_weight must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}
