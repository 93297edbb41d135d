//! Losses, the training loop and evaluation.

mod config;
mod evaluate;
mod losses;
mod trainer;

use thiserror::Error;

use crate::metrics::MetricsError;
use crate::models::ModelError;
use crate::numeric::NumericError;

pub use config::TrainConfig;
pub use evaluate::{evaluate, EvalMode, IdentityModel, PointModel, TrainedModel};
pub use losses::{
    elbo_loss, elbo_loss_single_sample, flow_elbo_loss, kl_gaussian, kl_gaussian_node, made_loss, made_loss_graph,
    vae_loss_graph, KlEstimator, LossBreakdown, LossNodes,
};
pub use trainer::{fit, split_indices, EpochLog, FitResult, Network, StepStats, Trainer, CHECKPOINT_FILE, SIDECAR_FILE};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("cloud {index} has {got} points, expected {expected}")]
    InconsistentPoints { index: usize, expected: usize, got: usize },
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
