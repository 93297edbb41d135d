//! Inverse autoregressive flow over the latent code.
//!
//! Each layer runs a masked network over its input `z` (plus the encoder
//! feature as unmasked context) to get a shift `m` and gate `s`, then
//! `sigma = sigmoid(s + 1.5)` and `z <- sigma * z + (1 - sigma) * m`.
//! Successive layers reverse the autoregressive order.

use std::f64::consts::PI;

use super::layers::{Init, Linear, ParamSpec};
use crate::numeric::{Graph, NodeId, NumericError, ParameterStore, Tensor};

type Result<T> = std::result::Result<T, NumericError>;

/// Added to the gate pre-activation so fresh layers start close to identity.
pub const GATE_OFFSET: f64 = 1.5;

/// Gate bias that saturates `sigmoid` to exactly 1.0 in `f64`.
const SATURATED_GATE: f64 = 40.0;

#[derive(Clone, Debug)]
pub struct IafLayer {
    input: Linear,
    context: Linear,
    mean: Linear,
    gate: Linear,
    dim: usize,
}

/// Autoregressive degree (1-based) of each latent coordinate.
fn degrees(dim: usize, reversed: bool) -> Vec<usize> {
    (0..dim).map(|i| if reversed { dim - i } else { i + 1 }).collect()
}

impl IafLayer {
    fn new(prefix: &str, dim: usize, context_dim: usize, hidden: usize, reversed: bool) -> Self {
        let deg = degrees(dim, reversed);
        let hidden_deg: Vec<usize> = (0..hidden)
            .map(|k| if dim > 1 { 1 + k % (dim - 1) } else { 0 })
            .collect();
        let in_mask = Tensor::new(
            vec![dim, hidden],
            deg.iter()
                .flat_map(|&d| hidden_deg.iter().map(move |&h| f64::from(u8::from(h >= d && h > 0))))
                .collect(),
        )
        .expect("mask shape");
        let out_mask = Tensor::new(
            vec![hidden, dim],
            hidden_deg
                .iter()
                .flat_map(|&h| deg.iter().map(move |&d| f64::from(u8::from(d > h && h > 0))))
                .collect(),
        )
        .expect("mask shape");
        let small = Init::Uniform(0.01);
        Self {
            input: Linear::new(&format!("{prefix}.in"), dim, hidden).masked(in_mask),
            context: Linear::new(&format!("{prefix}.ctx"), context_dim, hidden).without_bias(),
            mean: Linear::new(&format!("{prefix}.m"), hidden, dim)
                .masked(out_mask.clone())
                .with_weight_init(small),
            gate: Linear::new(&format!("{prefix}.s"), hidden, dim)
                .masked(out_mask)
                .with_weight_init(small),
            dim,
        }
    }

    fn specs(&self) -> Vec<ParamSpec> {
        [&self.input, &self.context, &self.mean, &self.gate]
            .iter()
            .flat_map(|l| l.specs())
            .collect()
    }

    /// `(m, s + 1.5)` for input `z` and context `h`.
    pub fn shift_and_gate(&self, g: &Graph, store: &ParameterStore, z: NodeId, h: NodeId) -> Result<(NodeId, NodeId)> {
        let hidden = g.relu(g.add(
            self.input.forward(g, store, z)?,
            self.context.forward(g, store, h)?,
        )?)?;
        let m = self.mean.forward(g, store, hidden)?;
        let s = g.offset(self.gate.forward(g, store, hidden)?, GATE_OFFSET)?;
        Ok((m, s))
    }

    /// Returns `(z_out, log sigma)`.
    pub fn forward(&self, g: &Graph, store: &ParameterStore, z: NodeId, h: NodeId) -> Result<(NodeId, NodeId)> {
        let (m, s) = self.shift_and_gate(g, store, z, h)?;
        let sigma = g.sigmoid(s)?;
        // m + sigma * (z - m)
        let z_out = g.add(m, g.mul(sigma, g.sub(z, m)?)?)?;
        Ok((z_out, g.log(sigma)?))
    }

    fn numeric_shift_sigma(&self, store: &ParameterStore, z: &[f64], h: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = Graph::new();
        let zn = g.constant(Tensor::row(z.to_vec()))?;
        let hn = g.constant(h.clone())?;
        let (m, s) = self.shift_and_gate(&g, store, zn, hn)?;
        let sigma = g.sigmoid(s)?;
        Ok((g.value(m).into_data(), g.value(sigma).into_data()))
    }

    /// Solve `z_out = sigma(z) * z + (1 - sigma(z)) * m(z)` for `z`, one
    /// coordinate per sweep in autoregressive order.
    pub fn invert(&self, store: &ParameterStore, z_out: &[f64], h: &Tensor) -> Result<Vec<f64>> {
        let mut z = z_out.to_vec();
        for _ in 0..self.dim {
            let (m, sigma) = self.numeric_shift_sigma(store, &z, h)?;
            z = (0..self.dim)
                .map(|i| (z_out[i] - (1.0 - sigma[i]) * m[i]) / sigma[i])
                .collect();
        }
        Ok(z)
    }

    /// Make the layer an exact identity: zero shift, gate saturated at 1.
    pub fn set_identity(&self, store: &mut ParameterStore) -> Result<()> {
        for (l, bias) in [(&self.mean, 0.0), (&self.gate, SATURATED_GATE)] {
            store.set(&l.weight, Tensor::zeros(&[l.inputs, l.outputs]))?;
            if let Some(b) = &l.bias {
                store.set(b, Tensor::full(&[1, l.outputs], bias))?;
            }
        }
        Ok(())
    }

    /// Overwrite shift and gate with constants: `m = shift`, and the gate
    /// bias chosen so `sigma = sigma_value` exactly up to rounding.
    pub fn set_constant(&self, store: &mut ParameterStore, shift: f64, sigma_value: f64) -> Result<()> {
        let logit = (sigma_value / (1.0 - sigma_value)).ln() - GATE_OFFSET;
        for (l, bias) in [(&self.mean, shift), (&self.gate, logit)] {
            store.set(&l.weight, Tensor::zeros(&[l.inputs, l.outputs]))?;
            if let Some(b) = &l.bias {
                store.set(b, Tensor::full(&[1, l.outputs], bias))?;
            }
        }
        Ok(())
    }

    pub fn input_mask(&self) -> &Tensor {
        self.input.mask().expect("masked")
    }

    pub fn output_mask(&self) -> &Tensor {
        self.mean.mask().expect("masked")
    }
}

/// Stack of IAF layers.
#[derive(Clone, Debug)]
pub struct IafFlow {
    pub layers: Vec<IafLayer>,
    dim: usize,
}

/// Graph nodes of a flow pass.
#[derive(Clone, Debug)]
pub struct FlowOutput {
    pub z_t: NodeId,
    /// `[1, D]` log sigma of every layer.
    pub log_sigmas: Vec<NodeId>,
    /// Scalar sum of every layer's log sigma.
    pub sum_log_sigma: NodeId,
}

impl IafFlow {
    pub fn new(prefix: &str, layers: usize, dim: usize, context_dim: usize, hidden: usize) -> Self {
        Self {
            layers: (0..layers)
                .map(|t| IafLayer::new(&format!("{prefix}{t}"), dim, context_dim, hidden, t % 2 == 1))
                .collect(),
            dim,
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        self.layers.iter().flat_map(IafLayer::specs).collect()
    }

    pub fn forward(&self, g: &Graph, store: &ParameterStore, z0: NodeId, h: NodeId) -> Result<FlowOutput> {
        if self.layers.is_empty() {
            return Err(NumericError::BadShape("flow has no layers".into()));
        }
        let mut z = z0;
        let mut log_sigmas = Vec::with_capacity(self.layers.len());
        let mut total = None;
        for layer in &self.layers {
            let (next, ls) = layer.forward(g, store, z, h)?;
            let s = g.sum(ls)?;
            total = Some(match total {
                None => s,
                Some(t) => g.add(t, s)?,
            });
            log_sigmas.push(ls);
            z = next;
        }
        Ok(FlowOutput {
            z_t: z,
            log_sigmas,
            sum_log_sigma: total.expect("nonempty"),
        })
    }

    /// Invert every layer, last to first.
    pub fn invert(&self, store: &ParameterStore, z_t: &[f64], h: &Tensor) -> Result<Vec<f64>> {
        let mut z = z_t.to_vec();
        for layer in self.layers.iter().rev() {
            z = layer.invert(store, &z, h)?;
        }
        Ok(z)
    }

    pub fn set_identity(&self, store: &mut ParameterStore) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.set_identity(store))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// `log q(z_T | x) = -sum_i (eps_i^2 / 2 + log(2 pi) / 2 + log sigma_0,i + sum_t log sigma_t,i)`
/// where `sigma_0 = exp(logvar / 2)` is the encoder's standard deviation and
/// `sum_log_sigma` the flow's accumulated log gates (a scalar node; pass
/// `None` when there is no flow).
pub fn log_posterior(
    g: &Graph,
    eps: NodeId,
    logvar: NodeId,
    sum_log_sigma: Option<NodeId>,
) -> Result<NodeId> {
    let d = g.shape(eps).iter().product::<usize>() as f64;
    let half_eps2 = g.scale(g.sum(g.square(eps)?)?, 0.5)?;
    let half_logvar = g.scale(g.sum(logvar)?, 0.5)?;
    let mut total = g.offset(g.add(half_eps2, half_logvar)?, 0.5 * d * (2.0 * PI).ln())?;
    if let Some(s) = sum_log_sigma {
        total = g.add(total, s)?;
    }
    g.neg(total)
}

/// Standard-normal log density of a latent vector.
pub fn log_standard_normal(g: &Graph, z: NodeId) -> Result<NodeId> {
    let d = g.shape(z).iter().product::<usize>() as f64;
    let half_z2 = g.scale(g.sum(g.square(z)?)?, 0.5)?;
    g.neg(g.offset(half_z2, 0.5 * d * (2.0 * PI).ln())?)
}
