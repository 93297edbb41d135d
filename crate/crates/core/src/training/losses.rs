use std::sync::Arc;

use super::TrainingError;
use crate::geometry::PointCloud;
use crate::metrics::ChamferMode;
use crate::models::{log_standard_normal, ChamferLoss, Made, MadeOutput, ModelError, Vae, VaeForward};
use crate::numeric::{Graph, NodeId, NumericError, ParameterStore, Tensor};

/// Loss terms of one cloud (or a mean over clouds).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    /// Always `kl + recon`.
    pub nelbo: f64,
    pub kl: f64,
    pub recon: f64,
}

impl LossBreakdown {
    pub fn new(kl: f64, recon: f64) -> Self {
        Self {
            nelbo: kl + recon,
            kl,
            recon,
        }
    }

    pub fn mean(items: &[LossBreakdown]) -> Self {
        let n = items.len().max(1) as f64;
        let kl = items.iter().map(|l| l.kl).sum::<f64>() / n;
        let recon = items.iter().map(|l| l.recon).sum::<f64>() / n;
        Self::new(kl, recon)
    }
}

/// How the KL term of a flow-free VAE is estimated. With a flow the
/// single-sample form is the only option.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KlEstimator {
    /// Closed form for two diagonal Gaussians.
    #[default]
    Analytic,
    /// `log q(z) - log p(z)` at the drawn `z`.
    SingleSample,
}

/// Scalar loss nodes of one cloud.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    /// `recon + kl_weight * kl`; what training differentiates.
    pub objective: NodeId,
    pub kl: NodeId,
    pub recon: NodeId,
}

/// `sum_i (mu_i^2 + exp(logvar_i) - 1 - logvar_i) / 2`.
pub fn kl_gaussian(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

pub fn kl_gaussian_node(g: &Graph, mu: NodeId, logvar: NodeId) -> Result<NodeId, NumericError> {
    let inner = g.sub(g.add(g.square(mu)?, g.exp(logvar)?)?, logvar)?;
    g.scale(g.offset(inner, -1.0)?, 0.5).and_then(|t| g.sum(t))
}

fn chamfer_node(g: &Graph, pred: NodeId, target: &[[f64; 3]]) -> Result<NodeId, NumericError> {
    g.custom(pred, Arc::new(ChamferLoss::new(target.to_vec(), ChamferMode::L2)))
}

/// Build the VAE loss for `cloud` on `g`.
///
/// Reconstruction is the Chamfer distance to the input. For the grouped
/// decoder the target is sorted along the model's axis and split into
/// contiguous groups, and the loss is the sum of per-group distances, so
/// each group's term only involves groups decoded before it.
pub fn vae_loss_graph(
    g: &Graph,
    model: &Vae,
    store: &ParameterStore,
    cloud: &PointCloud,
    eps: &[f64],
    kl_weight: f64,
    estimator: KlEstimator,
) -> Result<(LossNodes, VaeForward), ModelError> {
    model.check_cloud(cloud)?;
    let points = g.input("points", cloud.to_tensor())?;
    let f = model.forward(g, store, points, eps)?;
    let recon = match &f.groups {
        None => chamfer_node(g, f.points, cloud.points())?,
        Some(groups) => {
            let target = cloud.sort_along_axis(model.config().sort_axis);
            let size = target.len() / groups.len();
            let mut total: Option<NodeId> = None;
            for (i, &node) in groups.iter().enumerate() {
                let term = chamfer_node(g, node, &target.points()[i * size..(i + 1) * size])?;
                total = Some(match total {
                    None => term,
                    Some(t) => g.add(t, term)?,
                });
            }
            total.expect("at least one group")
        }
    };
    let kl = if model.flow.is_some() || estimator == KlEstimator::SingleSample {
        g.sub(f.latent.log_q, log_standard_normal(g, f.latent.z_t)?)?
    } else {
        kl_gaussian_node(g, f.encoder.mu, f.encoder.logvar)?
    };
    let objective = if kl_weight == 0.0 {
        recon
    } else if kl_weight == 1.0 {
        g.add(recon, kl)?
    } else {
        g.add(recon, g.scale(kl, kl_weight)?)?
    };
    Ok((LossNodes { objective, kl, recon }, f))
}

fn breakdown(g: &Graph, nodes: &LossNodes) -> LossBreakdown {
    LossBreakdown::new(g.scalar(nodes.kl), g.scalar(nodes.recon))
}

/// ELBO terms with the closed-form KL (single-sample KL when the model has a
/// flow).
pub fn elbo_loss(model: &Vae, store: &ParameterStore, cloud: &PointCloud, eps: &[f64]) -> Result<LossBreakdown, ModelError> {
    let g = Graph::new();
    let (nodes, _) = vae_loss_graph(&g, model, store, cloud, eps, 1.0, KlEstimator::Analytic)?;
    Ok(breakdown(&g, &nodes))
}

/// ELBO terms with the KL estimated as `log q(z) - log p(z)` at the drawn `z`.
pub fn elbo_loss_single_sample(
    model: &Vae,
    store: &ParameterStore,
    cloud: &PointCloud,
    eps: &[f64],
) -> Result<LossBreakdown, ModelError> {
    let g = Graph::new();
    let (nodes, _) = vae_loss_graph(&g, model, store, cloud, eps, 1.0, KlEstimator::SingleSample)?;
    Ok(breakdown(&g, &nodes))
}

/// `recon(z_T) + log q(z_T | x) - log p(z_T)`; requires a flow.
pub fn flow_elbo_loss(model: &Vae, store: &ParameterStore, cloud: &PointCloud, eps: &[f64]) -> Result<LossBreakdown, ModelError> {
    if model.flow.is_none() {
        return Err(ModelError::Config("flow_elbo_loss needs flow_layers >= 1".into()));
    }
    elbo_loss_single_sample(model, store, cloud, eps)
}

/// `-log P(x) + lambda * sum sigma` for a flat `[1, K]` input.
pub fn made_loss_graph(
    g: &Graph,
    model: &Made,
    store: &ParameterStore,
    flat: &[f64],
    lambda: f64,
) -> Result<(NodeId, MadeOutput), TrainingError> {
    if !(lambda >= 0.0) {
        return Err(TrainingError::Config(format!("sigma penalty must be nonnegative, got {lambda}")));
    }
    let x = g.input("points", Tensor::row(flat.to_vec()))?;
    let out = model.forward(g, store, x)?;
    let nll = g.neg(out.log_prob)?;
    let loss = if lambda == 0.0 {
        nll
    } else {
        g.add(nll, g.scale(out.sigma_sum, lambda)?)?
    };
    Ok((loss, out))
}

/// MADE training loss of a cloud sorted along the model's axis.
pub fn made_loss(model: &Made, store: &ParameterStore, cloud: &PointCloud, lambda: f64) -> Result<f64, TrainingError> {
    let flat = model.flatten_input(cloud)?;
    let g = Graph::new();
    let (loss, _) = made_loss_graph(&g, model, store, &flat, lambda)?;
    Ok(g.scalar(loss))
}
