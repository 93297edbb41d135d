use rand::Rng;

use super::config::ModelConfig;
use super::decoder::Decoder;
use super::encoder::{Encoder, EncoderOutput};
use super::flow::{log_posterior, IafFlow};
use super::latent::{reparameterize, standard_normal, LatentNodes, LatentSample};
use super::layers::{check_store, init_store, ParamSpec};
use super::ModelError;
use crate::geometry::PointCloud;
use crate::numeric::{Graph, NodeId, NumericError, ParameterStore, Tensor};
use crate::rng;

/// Point-cloud VAE: encoder, optional IAF posterior, decoder.
#[derive(Clone, Debug)]
pub struct Vae {
    pub encoder: Encoder,
    pub flow: Option<IafFlow>,
    pub decoder: Decoder,
    config: ModelConfig,
}

/// Graph nodes of one encode-sample-decode pass.
#[derive(Clone, Debug)]
pub struct VaeForward {
    pub encoder: EncoderOutput,
    pub latent: LatentNodes,
    /// Decoded `[N, 3]` cloud.
    pub points: NodeId,
    /// Per-group `[P, 3]` outputs of a NADE decoder.
    pub groups: Option<Vec<NodeId>>,
}

impl Vae {
    pub fn new(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let flow = (config.flow_layers > 0).then(|| {
            IafFlow::new(
                "flow",
                config.flow_layers,
                config.latent_dim,
                Encoder::feature_dim(config),
                config.flow_hidden,
            )
        });
        Ok(Self {
            encoder: Encoder::new(config),
            flow,
            decoder: Decoder::new(config),
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s = self.encoder.specs();
        if let Some(f) = &self.flow {
            s.extend(f.specs());
        }
        s.extend(self.decoder.specs());
        s
    }

    pub fn init_params(&self, seed: u64) -> Result<ParameterStore, ModelError> {
        Ok(init_store(&self.specs(), &mut rng::stream(seed, rng::streams::INIT))?)
    }

    pub fn check_store(&self, store: &ParameterStore) -> Result<(), ModelError> {
        check_store(&self.specs(), store).map_err(ModelError::ArchitectureMismatch)
    }

    pub fn check_cloud(&self, cloud: &PointCloud) -> Result<(), ModelError> {
        if cloud.len() != self.config.n_points {
            return Err(ModelError::PointCount {
                expected: self.config.n_points,
                got: cloud.len(),
            });
        }
        Ok(())
    }

    /// Encoder only: `(mu, logvar)` as vectors.
    pub fn encode_moments(&self, store: &ParameterStore, cloud: &PointCloud) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        self.check_cloud(cloud)?;
        let g = Graph::new();
        let x = g.constant(cloud.to_tensor())?;
        let out = self.encoder.forward(&g, store, x)?;
        Ok((g.value(out.mu).into_data(), g.value(out.logvar).into_data()))
    }

    /// Latent draw on `g` from encoder output and noise `eps` (`[1, D]`).
    pub fn latent(
        &self,
        g: &Graph,
        store: &ParameterStore,
        enc: &EncoderOutput,
        eps: NodeId,
    ) -> Result<LatentNodes, NumericError> {
        let z = reparameterize(g, enc.mu, enc.logvar, eps)?;
        let (z_t, sum_log_sigma) = match &self.flow {
            Some(flow) => {
                let out = flow.forward(g, store, z, enc.feature)?;
                (out.z_t, Some(out.sum_log_sigma))
            }
            None => (z, None),
        };
        let log_q = log_posterior(g, eps, enc.logvar, sum_log_sigma)?;
        Ok(LatentNodes {
            eps,
            z,
            z_t,
            log_q,
            sum_log_sigma,
        })
    }

    /// Full pass for `points` (an `[N, 3]` node) with noise `eps`.
    pub fn forward(&self, g: &Graph, store: &ParameterStore, points: NodeId, eps: &[f64]) -> Result<VaeForward, ModelError> {
        let n = g.shape(points)[0];
        if n != self.config.n_points {
            return Err(ModelError::PointCount {
                expected: self.config.n_points,
                got: n,
            });
        }
        if eps.len() != self.config.latent_dim {
            return Err(ModelError::Config(format!(
                "noise has {} entries, latent_dim is {}",
                eps.len(),
                self.config.latent_dim
            )));
        }
        let encoder = self.encoder.forward(g, store, points)?;
        let eps = g.input("eps", Tensor::row(eps.to_vec()))?;
        let latent = self.latent(g, store, &encoder, eps)?;
        let (decoded, groups) = self.decoder.forward(g, store, latent.z_t)?;
        Ok(VaeForward {
            encoder,
            latent,
            points: decoded,
            groups,
        })
    }

    /// Latent draw for a cloud with explicit noise.
    pub fn encode(&self, store: &ParameterStore, cloud: &PointCloud, eps: &[f64]) -> Result<LatentSample, ModelError> {
        let g = Graph::new();
        let x = g.constant(cloud.to_tensor())?;
        let f = self.forward(&g, store, x, eps)?;
        Ok(LatentSample {
            mu: g.value(f.encoder.mu).into_data(),
            logvar: g.value(f.encoder.logvar).into_data(),
            eps: eps.to_vec(),
            z: g.value(f.latent.z).into_data(),
            z_t: g.value(f.latent.z_t).into_data(),
            log_q: g.scalar(f.latent.log_q),
        })
    }

    pub fn decode(&self, store: &ParameterStore, z: &[f64]) -> Result<PointCloud, ModelError> {
        let g = Graph::new();
        let zn = g.constant(Tensor::row(z.to_vec()))?;
        let (points, _) = self.decoder.forward(&g, store, zn)?;
        Ok(PointCloud::from_tensor(&g.value(points))?)
    }

    /// Decoded prefixes after each autoregressive step: groups `1..=i` for
    /// every `i`. A single entry for the MLP decoder.
    pub fn decode_steps(&self, store: &ParameterStore, z: &[f64]) -> Result<Vec<PointCloud>, ModelError> {
        let g = Graph::new();
        let zn = g.constant(Tensor::row(z.to_vec()))?;
        let (points, groups) = self.decoder.forward(&g, store, zn)?;
        match groups {
            None => Ok(vec![PointCloud::from_tensor(&g.value(points))?]),
            Some(groups) => {
                let mut acc: Vec<[f64; 3]> = Vec::new();
                let mut steps = Vec::with_capacity(groups.len());
                for node in groups {
                    acc.extend(PointCloud::from_tensor(&g.value(node))?.points());
                    steps.push(PointCloud::new(acc.clone())?);
                }
                Ok(steps)
            }
        }
    }

    /// Deterministic reconstruction through the posterior mean (`eps = 0`).
    pub fn reconstruct(&self, store: &ParameterStore, cloud: &PointCloud) -> Result<PointCloud, ModelError> {
        let eps = vec![0.0; self.config.latent_dim];
        let latent = self.encode(store, cloud, &eps)?;
        self.decode(store, &latent.z_t)
    }

    /// Decode a prior draw `z ~ N(0, I)`.
    pub fn sample(&self, store: &ParameterStore, rng: &mut impl Rng) -> Result<PointCloud, ModelError> {
        let z = standard_normal(rng, self.config.latent_dim);
        self.decode(store, &z)
    }

    pub fn sample_latent(&self, rng: &mut impl Rng) -> Vec<f64> {
        standard_normal(rng, self.config.latent_dim)
    }
}
