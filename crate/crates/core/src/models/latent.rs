use rand::Rng;
use rand_distr::StandardNormal;

use crate::numeric::{Graph, NodeId, NumericError};

/// Realized latent draw for one cloud, as plain vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub eps: Vec<f64>,
    pub z: Vec<f64>,
    /// Flow output; equals `z` without a flow.
    pub z_t: Vec<f64>,
    /// Log posterior density at `z_t`.
    pub log_q: f64,
}

/// Graph nodes of a latent draw.
#[derive(Clone, Copy, Debug)]
pub struct LatentNodes {
    pub eps: NodeId,
    pub z: NodeId,
    pub z_t: NodeId,
    pub log_q: NodeId,
    /// Scalar sum of the flow's log sigmas, when a flow is present.
    pub sum_log_sigma: Option<NodeId>,
}

/// `z = mu + exp(logvar / 2) * eps`. `eps` may hold several rows of noise
/// for a single `[1, D]` pair of moments.
pub fn reparameterize(g: &Graph, mu: NodeId, logvar: NodeId, eps: NodeId) -> Result<NodeId, NumericError> {
    let sigma = g.exp(g.scale(logvar, 0.5)?)?;
    g.add(g.mul(eps, sigma)?, mu)
}

pub(crate) fn standard_normal(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}
