use super::config::{EncoderKind, ModelConfig};
use super::layers::{Init, Linear, Mlp, ParamSpec};
use crate::numeric::{Axis, Graph, NodeId, NumericError, ParameterStore};

type Result<T> = std::result::Result<T, NumericError>;

/// Graph nodes produced by an encoder for one cloud.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub mu: NodeId,
    pub logvar: NodeId,
    /// Last hidden layer before the `(mu, logvar)` head; conditions the flow.
    pub feature: NodeId,
    /// Per-point features right before max-pooling, `[N, C]`.
    pub point_features: NodeId,
}

/// Pooled-feature MLP and the final `(mu, logvar)` projection, shared by both
/// encoders.
#[derive(Clone, Debug)]
struct Head {
    fc: Mlp,
    out: Linear,
    latent: usize,
}

impl Head {
    fn new(prefix: &str, inputs: usize, widths: &[usize], latent: usize) -> Self {
        let fc = Mlp::new(&format!("{prefix}.fc"), inputs, widths, true);
        let last = fc.outputs();
        // small initial weights keep exp(logvar) near one
        let out = Linear::new(&format!("{prefix}.head"), last, 2 * latent)
            .with_weight_init(Init::Uniform(0.1 * (6.0 / last as f64).sqrt()));
        Self { fc, out, latent }
    }

    fn specs(&self) -> Vec<ParamSpec> {
        let mut s = self.fc.specs();
        s.extend(self.out.specs());
        s
    }

    fn forward(&self, g: &Graph, store: &ParameterStore, pooled: NodeId) -> Result<(NodeId, NodeId, NodeId)> {
        let feature = self.fc.forward(g, store, pooled)?;
        let out = self.out.forward(g, store, feature)?;
        let mu = g.slice_cols(out, 0..self.latent)?;
        let logvar = g.slice_cols(out, self.latent..2 * self.latent)?;
        Ok((mu, logvar, feature))
    }
}

/// Shared per-point MLP (pointwise 1-D convolutions), max-pool over points,
/// then fully connected layers.
#[derive(Clone, Debug)]
pub struct PointNetEncoder {
    conv: Mlp,
    head: Head,
}

impl PointNetEncoder {
    pub fn new(prefix: &str, config: &ModelConfig) -> Self {
        let conv = Mlp::new(&format!("{prefix}.conv"), 3, &config.conv_widths, true);
        let head = Head::new(prefix, conv.outputs(), &config.encoder_fc, config.latent_dim);
        Self { conv, head }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s = self.conv.specs();
        s.extend(self.head.specs());
        s
    }

    pub fn forward(&self, g: &Graph, store: &ParameterStore, points: NodeId) -> Result<EncoderOutput> {
        let point_features = self.conv.forward(g, store, points)?;
        let pooled = g.max_pool_rows(point_features)?;
        let (mu, logvar, feature) = self.head.forward(g, store, pooled)?;
        Ok(EncoderOutput {
            mu,
            logvar,
            feature,
            point_features,
        })
    }
}

/// Names of one post-norm self-attention block's parameters.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub norm1: (String, String),
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: (String, String),
    heads: usize,
    dim: usize,
}

impl AttentionBlock {
    fn new(prefix: &str, dim: usize, heads: usize, ff_dim: usize) -> Self {
        let xavier = Init::Uniform((3.0 / dim as f64).sqrt());
        let proj = |name: &str| Linear::new(&format!("{prefix}.{name}"), dim, dim).with_weight_init(xavier);
        Self {
            query: proj("q"),
            key: proj("k"),
            value: proj("v"),
            output: proj("o"),
            norm1: (format!("{prefix}.ln1.g"), format!("{prefix}.ln1.b")),
            ff1: Linear::new(&format!("{prefix}.ff1"), dim, ff_dim),
            ff2: Linear::new(&format!("{prefix}.ff2"), ff_dim, dim).with_weight_init(Init::Uniform((3.0 / ff_dim as f64).sqrt())),
            norm2: (format!("{prefix}.ln2.g"), format!("{prefix}.ln2.b")),
            heads,
            dim,
        }
    }

    fn specs(&self) -> Vec<ParamSpec> {
        let mut s = Vec::new();
        for l in [&self.query, &self.key, &self.value, &self.output] {
            s.extend(l.specs());
        }
        for (gain, bias) in [&self.norm1, &self.norm2] {
            s.push(ParamSpec::new(gain, &[1, self.dim], Init::Const(1.0)));
            s.push(ParamSpec::new(bias, &[1, self.dim], Init::Const(0.0)));
        }
        s.extend(self.ff1.specs());
        s.extend(self.ff2.specs());
        s
    }

    /// Multi-head scaled dot-product self-attention. Returns the projected
    /// output and the `[N, N]` attention weights of every head.
    pub fn attention(&self, g: &Graph, store: &ParameterStore, x: NodeId) -> Result<(NodeId, Vec<NodeId>)> {
        let q = self.query.forward(g, store, x)?;
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        let dk = self.dim / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = h * dk..(h + 1) * dk;
            let qh = g.slice_cols(q, cols.clone())?;
            let kh = g.slice_cols(k, cols.clone())?;
            let vh = g.slice_cols(v, cols)?;
            let logits = g.scale(g.matmul(qh, g.transpose(kh)?)?, scale)?;
            let a = g.softmax(logits, Axis::Cols)?;
            outs.push(g.matmul(a, vh)?);
            weights.push(a);
        }
        let joined = if outs.len() == 1 { outs[0] } else { g.concat(&outs, Axis::Cols)? };
        Ok((self.output.forward(g, store, joined)?, weights))
    }

    fn norm(&self, g: &Graph, store: &ParameterStore, x: NodeId, names: &(String, String)) -> Result<NodeId> {
        let n = g.layer_norm(x, 1e-5)?;
        g.add(g.mul(n, g.param(store, &names.0)?)?, g.param(store, &names.1)?)
    }

    pub fn forward(&self, g: &Graph, store: &ParameterStore, x: NodeId) -> Result<NodeId> {
        let (a, _) = self.attention(g, store, x)?;
        let x = self.norm(g, store, g.add(x, a)?, &self.norm1)?;
        let f = self.ff2.forward(g, store, g.relu(self.ff1.forward(g, store, x)?)?)?;
        self.norm(g, store, g.add(x, f)?, &self.norm2)
    }
}

/// Per-point embedding, stacked self-attention blocks without positional
/// encoding, max-pool, fully connected head.
#[derive(Clone, Debug)]
pub struct TransformerEncoder {
    embed: Mlp,
    project: Linear,
    pub blocks: Vec<AttentionBlock>,
    head: Head,
}

impl TransformerEncoder {
    pub fn new(prefix: &str, config: &ModelConfig) -> Self {
        let t = &config.transformer;
        let embed = Mlp::new(&format!("{prefix}.embed"), 3, &t.embed_widths, true);
        let project = Linear::new(&format!("{prefix}.proj"), embed.outputs(), t.model_dim);
        let blocks = (0..t.layers)
            .map(|l| AttentionBlock::new(&format!("{prefix}.block{l}"), t.model_dim, t.heads, t.ff_dim))
            .collect();
        let head = Head::new(prefix, t.model_dim, &config.encoder_fc, config.latent_dim);
        Self {
            embed,
            project,
            blocks,
            head,
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s = self.embed.specs();
        s.extend(self.project.specs());
        for b in &self.blocks {
            s.extend(b.specs());
        }
        s.extend(self.head.specs());
        s
    }

    /// Per-point features entering the attention stack.
    pub fn embed(&self, g: &Graph, store: &ParameterStore, points: NodeId) -> Result<NodeId> {
        let e = self.embed.forward(g, store, points)?;
        self.project.forward(g, store, e)
    }

    pub fn forward(&self, g: &Graph, store: &ParameterStore, points: NodeId) -> Result<EncoderOutput> {
        let mut x = self.embed(g, store, points)?;
        for b in &self.blocks {
            x = b.forward(g, store, x)?;
        }
        let pooled = g.max_pool_rows(x)?;
        let (mu, logvar, feature) = self.head.forward(g, store, pooled)?;
        Ok(EncoderOutput {
            mu,
            logvar,
            feature,
            point_features: x,
        })
    }
}

#[derive(Clone, Debug)]
pub enum Encoder {
    PointNet(PointNetEncoder),
    Transformer(TransformerEncoder),
}

impl Encoder {
    pub fn new(config: &ModelConfig) -> Self {
        match config.encoder {
            EncoderKind::PointNet => Encoder::PointNet(PointNetEncoder::new("enc", config)),
            EncoderKind::Transformer => Encoder::Transformer(TransformerEncoder::new("enc", config)),
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        match self {
            Encoder::PointNet(e) => e.specs(),
            Encoder::Transformer(e) => e.specs(),
        }
    }

    pub fn feature_dim(config: &ModelConfig) -> usize {
        *config.encoder_fc.last().expect("validated")
    }

    pub fn forward(&self, g: &Graph, store: &ParameterStore, points: NodeId) -> Result<EncoderOutput> {
        match self {
            Encoder::PointNet(e) => e.forward(g, store, points),
            Encoder::Transformer(e) => e.forward(g, store, points),
        }
    }
}
