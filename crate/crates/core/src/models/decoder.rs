use super::config::{DecoderKind, ModelConfig};
use super::layers::{Init, Linear, Mlp, ParamSpec};
use crate::numeric::{Axis, Graph, NodeId, NumericError, ParameterStore, Tensor};

type Result<T> = std::result::Result<T, NumericError>;

/// Fully connected decoder: `D -> widths... -> 3N`, reshaped to `[N, 3]`.
#[derive(Clone, Debug)]
pub struct MlpDecoder {
    pub net: Mlp,
    n_points: usize,
}

impl MlpDecoder {
    pub fn new(prefix: &str, config: &ModelConfig) -> Self {
        let mut widths = config.decoder_widths.clone();
        widths.push(3 * config.n_points);
        Self {
            net: Mlp::new(prefix, config.latent_dim, &widths, false),
            n_points: config.n_points,
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        self.net.specs()
    }

    pub fn forward(&self, g: &Graph, store: &ParameterStore, z: NodeId) -> Result<NodeId> {
        let flat = self.net.forward(g, store, z)?;
        g.reshape(flat, &[self.n_points, 3])
    }
}

/// Group-wise autoregressive decoder.
///
/// The cloud is produced as `G` contiguous groups of `P` points. Group `i`
/// has its own MLP whose input is `z` followed by the embeddings of groups
/// `1..i` and zero padding up to `G - 1` embedding slots. Embeddings come
/// from one small PointNet shared by all groups.
#[derive(Clone, Debug)]
pub struct NadeDecoder {
    pub groups: Vec<Mlp>,
    pub embed_conv: Mlp,
    pub embed_out: Linear,
    group_size: usize,
    group_latent: usize,
    latent_dim: usize,
}

/// Graph nodes of a NADE decode.
#[derive(Clone, Debug)]
pub struct NadeOutput {
    /// `[P, 3]` per group, in decode order.
    pub groups: Vec<NodeId>,
    /// `[N, 3]`, all groups stacked.
    pub points: NodeId,
}

impl NadeDecoder {
    pub fn new(prefix: &str, config: &ModelConfig) -> Self {
        let n = config.nade_groups;
        let p = config.group_size();
        let m = config.nade_group_latent;
        let input = config.latent_dim + (n - 1) * m;
        let mut widths = config.nade_widths.clone();
        widths.push(3 * p);
        let groups = (0..n)
            .map(|i| Mlp::new(&format!("{prefix}.group{i}"), input, &widths, false))
            .collect();
        let embed_conv = Mlp::new(&format!("{prefix}.embed.conv"), 3, &config.nade_embed_widths, true);
        // small initial embeddings keep later groups from amplifying the
        // scale of earlier ones
        let embed_in = embed_conv.outputs();
        let embed_out = Linear::new(&format!("{prefix}.embed.out"), embed_in, m)
            .with_weight_init(Init::Uniform(0.1 * (6.0 / embed_in as f64).sqrt()));
        Self {
            groups,
            embed_conv,
            embed_out,
            group_size: p,
            group_latent: m,
            latent_dim: config.latent_dim,
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s: Vec<ParamSpec> = self.groups.iter().flat_map(Mlp::specs).collect();
        s.extend(self.embed_conv.specs());
        s.extend(self.embed_out.specs());
        s
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// `m`-dim embedding of a decoded `[P, 3]` group.
    pub fn embed(&self, g: &Graph, store: &ParameterStore, group: NodeId) -> Result<NodeId> {
        let f = self.embed_conv.forward(g, store, group)?;
        self.embed_out.forward(g, store, g.max_pool_rows(f)?)
    }

    pub fn forward(&self, g: &Graph, store: &ParameterStore, z: NodeId) -> Result<NadeOutput> {
        let n = self.groups.len();
        let mut cond: Vec<NodeId> = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        for (i, net) in self.groups.iter().enumerate() {
            let mut parts = vec![z];
            parts.extend(&cond);
            let pad = (n - 1 - i) * self.group_latent;
            if pad > 0 {
                parts.push(g.constant(Tensor::zeros(&[1, pad]))?);
            }
            let input = if parts.len() == 1 { z } else { g.concat(&parts, Axis::Cols)? };
            debug_assert_eq!(g.shape(input)[1], self.latent_dim + (n - 1) * self.group_latent);
            let flat = net.forward(g, store, input)?;
            let group = g.reshape(flat, &[self.group_size, 3])?;
            if i + 1 < n {
                cond.push(self.embed(g, store, group)?);
            }
            out.push(group);
        }
        let points = if out.len() == 1 { out[0] } else { g.concat(&out, Axis::Rows)? };
        Ok(NadeOutput { groups: out, points })
    }
}

#[derive(Clone, Debug)]
pub enum Decoder {
    Mlp(MlpDecoder),
    Nade(NadeDecoder),
}

impl Decoder {
    pub fn new(config: &ModelConfig) -> Self {
        match config.decoder {
            DecoderKind::Mlp => Decoder::Mlp(MlpDecoder::new("dec", config)),
            DecoderKind::Nade => Decoder::Nade(NadeDecoder::new("dec", config)),
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        match self {
            Decoder::Mlp(d) => d.specs(),
            Decoder::Nade(d) => d.specs(),
        }
    }

    /// Decoded `[N, 3]` points, plus the per-group nodes for NADE.
    pub fn forward(&self, g: &Graph, store: &ParameterStore, z: NodeId) -> Result<(NodeId, Option<Vec<NodeId>>)> {
        match self {
            Decoder::Mlp(d) => Ok((d.forward(g, store, z)?, None)),
            Decoder::Nade(d) => {
                let out = d.forward(g, store, z)?;
                Ok((out.points, Some(out.groups)))
            }
        }
    }
}
