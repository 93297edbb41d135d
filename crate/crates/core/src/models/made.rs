//! Masked autoregressive density over a sorted, flattened point cloud.
//!
//! Coordinates are ordered `x_1 .. x_K` (`K = 3N`, points sorted along the
//! configured axis). Hidden unit degrees are spread evenly over `1..K-1`;
//! a hidden unit sees inputs of degree `<=` its own, and output `i` sees
//! hidden units of degree `< i`, so `(mu_i, log sigma_i)` depend only on
//! `x_{<i}`.

use std::f64::consts::PI;

use rand::Rng;

use super::config::MadeConfig;
use super::latent::standard_normal;
use super::layers::{check_store, init_store, Init, Linear, ParamSpec};
use super::ModelError;
use crate::geometry::PointCloud;
use crate::numeric::{Graph, NodeId, NumericError, ParameterStore, Tensor};
use crate::rng;

#[derive(Clone, Debug)]
pub struct Made {
    pub hidden: Vec<Linear>,
    pub mean: Linear,
    pub log_sigma: Linear,
    config: MadeConfig,
}

/// Graph nodes of a MADE pass.
#[derive(Clone, Copy, Debug)]
pub struct MadeOutput {
    pub mu: NodeId,
    pub log_sigma: NodeId,
    /// Scalar `log P(x)`.
    pub log_prob: NodeId,
    /// Scalar `sum_i sigma_i`.
    pub sigma_sum: NodeId,
}

#[derive(Clone, Debug)]
pub struct MadeSample {
    pub cloud: PointCloud,
    /// Coordinates in generation order.
    pub flat: Vec<f64>,
    /// Log density accumulated while generating.
    pub log_prob: f64,
}

fn mask(rows: &[usize], cols: &[usize], connect: impl Fn(usize, usize) -> bool) -> Tensor {
    let data = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .map(|(r, c)| f64::from(u8::from(connect(r, c))))
        .collect();
    Tensor::new(vec![rows.len(), cols.len()], data).expect("mask shape")
}

fn matvec(x: &[f64], w: &Tensor, b: &[f64]) -> Vec<f64> {
    let mut out = b.to_vec();
    let cols = w.cols();
    for (p, &xp) in x.iter().enumerate() {
        if xp == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(&w.data()[p * cols..(p + 1) * cols]) {
            *o += xp * wv;
        }
    }
    out
}

/// Plain-tensor copy of the masked weights, for graph-free evaluation.
struct Frozen {
    hidden: Vec<(Tensor, Vec<f64>)>,
    mean: (Tensor, Vec<f64>),
    log_sigma: (Tensor, Vec<f64>),
}

impl Frozen {
    /// Output `i` only, given the last hidden activation.
    fn head(&self, h: &[f64], i: usize) -> (f64, f64) {
        let dot = |(w, b): &(Tensor, Vec<f64>)| {
            let cols = w.cols();
            b[i] + h.iter().enumerate().map(|(p, hp)| hp * w.data()[p * cols + i]).sum::<f64>()
        };
        (dot(&self.mean), dot(&self.log_sigma))
    }

    fn hidden_from_first(&self, pre: &[f64]) -> Vec<f64> {
        let mut h: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        for (w, b) in &self.hidden[1..] {
            h = matvec(&h, w, b).into_iter().map(|v| v.max(0.0)).collect();
        }
        h
    }
}

fn log_normal(x: f64, mu: f64, log_sigma: f64) -> f64 {
    let r = (x - mu) * (-log_sigma).exp();
    -0.5 * (2.0 * PI).ln() - log_sigma - 0.5 * r * r
}

impl Made {
    pub fn new(config: &MadeConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let k = config.dim();
        let h = config.hidden;
        let input_deg: Vec<usize> = (1..=k).collect();
        let hidden_deg: Vec<usize> = (0..h).map(|j| 1 + j * (k.max(2) - 1) / h).collect();
        let mut hidden = Vec::with_capacity(config.layers - 1);
        let mut prev_deg = input_deg.clone();
        for l in 0..config.layers - 1 {
            let m = mask(&prev_deg, &hidden_deg, |p, q| q >= p);
            hidden.push(Linear::new(&format!("made.h{l}"), prev_deg.len(), h).masked(m));
            prev_deg = hidden_deg.clone();
        }
        let out_mask = mask(&hidden_deg, &input_deg, |q, d| d > q);
        let small = Init::Uniform(0.1 * (6.0 / h as f64).sqrt());
        Ok(Self {
            hidden,
            mean: Linear::new("made.mu", h, k).masked(out_mask.clone()).with_weight_init(small),
            log_sigma: Linear::new("made.logsigma", h, k).masked(out_mask).with_weight_init(small),
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &MadeConfig {
        &self.config
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s: Vec<ParamSpec> = self.hidden.iter().flat_map(Linear::specs).collect();
        s.extend(self.mean.specs());
        s.extend(self.log_sigma.specs());
        s
    }

    pub fn init_params(&self, seed: u64) -> Result<ParameterStore, ModelError> {
        Ok(init_store(&self.specs(), &mut rng::stream(seed, rng::streams::INIT))?)
    }

    pub fn check_store(&self, store: &ParameterStore) -> Result<(), ModelError> {
        check_store(&self.specs(), store).map_err(ModelError::ArchitectureMismatch)
    }

    /// Network pass and log density for a `[1, K]` input node.
    pub fn forward(&self, g: &Graph, store: &ParameterStore, x: NodeId) -> Result<MadeOutput, NumericError> {
        let mut h = x;
        for layer in &self.hidden {
            h = g.relu(layer.forward(g, store, h)?)?;
        }
        let mu = self.mean.forward(g, store, h)?;
        let log_sigma = self.log_sigma.forward(g, store, h)?;
        let r = g.mul(g.sub(x, mu)?, g.exp(g.neg(log_sigma)?)?)?;
        let k = self.config.dim() as f64;
        let nll = g.add(g.sum(log_sigma)?, g.scale(g.sum(g.square(r)?)?, 0.5)?)?;
        let log_prob = g.neg(g.offset(nll, 0.5 * k * (2.0 * PI).ln())?)?;
        let sigma_sum = g.sum(g.exp(log_sigma)?)?;
        Ok(MadeOutput {
            mu,
            log_sigma,
            log_prob,
            sigma_sum,
        })
    }

    /// Validates point count and sort order, returning the flattened input.
    pub fn flatten_input(&self, cloud: &PointCloud) -> Result<Vec<f64>, ModelError> {
        if cloud.len() != self.config.n_points {
            return Err(ModelError::PointCount {
                expected: self.config.n_points,
                got: cloud.len(),
            });
        }
        if !cloud.is_sorted_along(self.config.sort_axis) {
            return Err(ModelError::Unsorted(self.config.sort_axis.name()));
        }
        Ok(cloud.flat())
    }

    /// `log P(x)` of a cloud sorted along the configured axis.
    pub fn log_prob(&self, store: &ParameterStore, cloud: &PointCloud) -> Result<f64, ModelError> {
        let flat = self.flatten_input(cloud)?;
        self.log_prob_flat(store, &flat)
    }

    /// `log P(x)` of a flat coordinate vector in generation order, without
    /// the sort check (generated samples need not be sorted).
    pub fn log_prob_flat(&self, store: &ParameterStore, flat: &[f64]) -> Result<f64, ModelError> {
        if flat.len() != self.config.dim() {
            return Err(ModelError::PointCount {
                expected: self.config.n_points,
                got: flat.len() / 3,
            });
        }
        let g = Graph::new();
        let x = g.constant(Tensor::row(flat.to_vec()))?;
        let out = self.forward(&g, store, x)?;
        Ok(g.scalar(out.log_prob))
    }

    fn freeze(&self, store: &ParameterStore) -> Result<Frozen, NumericError> {
        let part = |l: &Linear| -> Result<(Tensor, Vec<f64>), NumericError> {
            let b = l.bias.as_deref().expect("MADE layers have biases");
            let bias = store
                .get(b)
                .ok_or_else(|| NumericError::UnknownParam(b.to_string()))?
                .data()
                .to_vec();
            Ok((l.effective_weight(store)?, bias))
        };
        Ok(Frozen {
            hidden: self.hidden.iter().map(part).collect::<Result<_, _>>()?,
            mean: part(&self.mean)?,
            log_sigma: part(&self.log_sigma)?,
        })
    }

    /// `(mu, log sigma)` for every coordinate, evaluated without a graph.
    pub fn conditionals(&self, store: &ParameterStore, flat: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let f = self.freeze(store)?;
        let (w, b) = &f.hidden[0];
        let h = f.hidden_from_first(&matvec(flat, w, b));
        Ok((matvec(&h, &f.mean.0, &f.mean.1), matvec(&h, &f.log_sigma.0, &f.log_sigma.1)))
    }

    /// Sequential generation with the given standard-normal draws.
    pub fn sample_with_noise(&self, store: &ParameterStore, eps: &[f64]) -> Result<MadeSample, ModelError> {
        let k = self.config.dim();
        if eps.len() != k {
            return Err(ModelError::PointCount {
                expected: self.config.n_points,
                got: eps.len() / 3,
            });
        }
        let f = self.freeze(store)?;
        let (w1, b1) = &f.hidden[0];
        let cols = w1.cols();
        // first-layer pre-activation, updated as coordinates are fixed
        let mut pre = b1.clone();
        let mut flat = vec![0.0; k];
        let mut log_prob = 0.0;
        for i in 0..k {
            let h = f.hidden_from_first(&pre);
            let (mu, ls) = f.head(&h, i);
            let x = mu + ls.exp() * eps[i];
            log_prob += log_normal(x, mu, ls);
            flat[i] = x;
            for (p, wv) in pre.iter_mut().zip(&w1.data()[i * cols..(i + 1) * cols]) {
                *p += x * wv;
            }
        }
        Ok(MadeSample {
            cloud: PointCloud::from_flat(&flat)?,
            flat,
            log_prob,
        })
    }

    pub fn sample(&self, store: &ParameterStore, rng: &mut impl Rng) -> Result<MadeSample, ModelError> {
        let eps = standard_normal(rng, self.config.dim());
        self.sample_with_noise(store, &eps)
    }
}
