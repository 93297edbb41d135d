use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::ModelError;
use crate::geometry::Axis3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EncoderKind {
    #[default]
    PointNet,
    Transformer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DecoderKind {
    #[default]
    Mlp,
    Nade,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    /// Per-point layers applied before attention.
    pub embed_widths: Vec<usize>,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            model_dim: 128,
            ff_dim: 256,
            embed_widths: vec![64, 128],
        }
    }
}

/// Architecture of a point-cloud VAE.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_points: usize,
    pub latent_dim: usize,
    pub encoder: EncoderKind,
    pub decoder: DecoderKind,
    pub flow_layers: usize,
    pub nade_groups: usize,
    pub nade_group_latent: usize,
    pub transformer: TransformerConfig,
    /// Shared per-point layers of the PointNet encoder.
    pub conv_widths: Vec<usize>,
    /// Hidden fully connected widths after pooling; the last one is the
    /// feature that conditions the flow. A final layer emits `(mu, logvar)`.
    pub encoder_fc: Vec<usize>,
    /// Hidden widths of the MLP decoder.
    pub decoder_widths: Vec<usize>,
    pub flow_hidden: usize,
    pub nade_widths: Vec<usize>,
    /// Per-point widths of the group embedding network.
    pub nade_embed_widths: Vec<usize>,
    pub sort_axis: Axis3,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_points: 2048,
            latent_dim: 128,
            encoder: EncoderKind::PointNet,
            decoder: DecoderKind::Mlp,
            flow_layers: 0,
            nade_groups: 8,
            nade_group_latent: 128,
            transformer: TransformerConfig::default(),
            conv_widths: vec![64, 128, 256, 512],
            encoder_fc: vec![256, 256],
            decoder_widths: vec![256, 512],
            flow_hidden: 128,
            nade_widths: vec![256, 256],
            nade_embed_widths: vec![64, 128],
            sort_axis: Axis3::X,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.n_points == 0 || self.latent_dim == 0 {
            return bad("n_points and latent_dim must be positive".into());
        }
        if self.conv_widths.is_empty() || self.encoder_fc.is_empty() || self.decoder_widths.is_empty() {
            return bad("encoder and decoder need at least one hidden layer".into());
        }
        if self.decoder == DecoderKind::Nade {
            if self.nade_groups == 0 || !self.n_points.is_multiple_of(self.nade_groups) {
                return bad(format!(
                    "n_points {} is not divisible by nade_groups {}",
                    self.n_points, self.nade_groups
                ));
            }
            if self.nade_group_latent == 0 || self.nade_widths.is_empty() || self.nade_embed_widths.is_empty() {
                return bad("NADE widths must be nonempty and positive".into());
            }
        }
        if self.encoder == EncoderKind::Transformer {
            let t = &self.transformer;
            if t.heads == 0 || !t.model_dim.is_multiple_of(t.heads) {
                return bad(format!(
                    "transformer model_dim {} is not divisible by heads {}",
                    t.model_dim, t.heads
                ));
            }
            if t.layers == 0 || t.ff_dim == 0 {
                return bad("transformer needs at least one layer and a positive ff_dim".into());
            }
        }
        if self.flow_layers > 0 && self.flow_hidden == 0 {
            return bad("flow_hidden must be positive".into());
        }
        Ok(())
    }

    pub fn group_size(&self) -> usize {
        self.n_points / self.nade_groups.max(1)
    }
}

/// Architecture of the standalone masked autoregressive density model.
#[derive(Clone, Debug, PartialEq)]
pub struct MadeConfig {
    pub n_points: usize,
    pub hidden: usize,
    /// Masked layers in total, counting the output layer.
    pub layers: usize,
    pub sort_axis: Axis3,
}

impl Default for MadeConfig {
    fn default() -> Self {
        Self {
            n_points: 512,
            hidden: 512,
            layers: 5,
            sort_axis: Axis3::X,
        }
    }
}

impl MadeConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_points == 0 || self.hidden == 0 || self.layers < 2 {
            return Err(ModelError::Config(
                "MADE needs points, a positive hidden width and at least 2 layers".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        3 * self.n_points
    }
}

/// Either model family, as recorded in the checkpoint sidecar.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Vae(ModelConfig),
    Made(MadeConfig),
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list(s: &str) -> Result<Vec<usize>, ModelError> {
    s.split(',')
        .filter(|t| !t.is_empty())
        .map(|t| t.trim().parse().map_err(|_| ModelError::Sidecar(format!("bad width list `{s}`"))))
        .collect()
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelSpec::Vae(c) => c.validate(),
            ModelSpec::Made(c) => c.validate(),
        }
    }

    pub fn n_points(&self) -> usize {
        match self {
            ModelSpec::Vae(c) => c.n_points,
            ModelSpec::Made(c) => c.n_points,
        }
    }

    /// `key=value` lines, keys in a fixed order.
    pub fn to_sidecar(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        match self {
            ModelSpec::Vae(c) => {
                kv("model", "vae".into());
                kv("n_points", c.n_points.to_string());
                kv("latent_dim", c.latent_dim.to_string());
                kv(
                    "encoder",
                    match c.encoder {
                        EncoderKind::PointNet => "pointnet",
                        EncoderKind::Transformer => "transformer",
                    }
                    .into(),
                );
                kv(
                    "decoder",
                    match c.decoder {
                        DecoderKind::Mlp => "mlp",
                        DecoderKind::Nade => "nade",
                    }
                    .into(),
                );
                kv("flow_layers", c.flow_layers.to_string());
                kv("flow_hidden", c.flow_hidden.to_string());
                kv("nade_groups", c.nade_groups.to_string());
                kv("nade_group_latent", c.nade_group_latent.to_string());
                kv("nade_widths", list(&c.nade_widths));
                kv("nade_embed_widths", list(&c.nade_embed_widths));
                kv("transformer_layers", c.transformer.layers.to_string());
                kv("transformer_heads", c.transformer.heads.to_string());
                kv("transformer_model_dim", c.transformer.model_dim.to_string());
                kv("transformer_ff_dim", c.transformer.ff_dim.to_string());
                kv("transformer_embed_widths", list(&c.transformer.embed_widths));
                kv("conv_widths", list(&c.conv_widths));
                kv("encoder_fc", list(&c.encoder_fc));
                kv("decoder_widths", list(&c.decoder_widths));
                kv("sort_axis", c.sort_axis.name().into());
            }
            ModelSpec::Made(c) => {
                kv("model", "made".into());
                kv("n_points", c.n_points.to_string());
                kv("hidden", c.hidden.to_string());
                kv("layers", c.layers.to_string());
                kv("sort_axis", c.sort_axis.name().into());
            }
        }
        out
    }

    pub fn from_sidecar(text: &str) -> Result<Self, ModelError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Sidecar(format!("line {}: expected key=value", i + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .cloned()
                .ok_or_else(|| ModelError::Sidecar(format!("missing key `{k}`")))
        };
        let num = |k: &str| -> Result<usize, ModelError> {
            get(k)?
                .parse()
                .map_err(|_| ModelError::Sidecar(format!("key `{k}` is not a count")))
        };
        let axis = |k: &str| -> Result<Axis3, ModelError> {
            let v = get(k)?;
            Axis3::parse(&v).ok_or_else(|| ModelError::Sidecar(format!("bad axis `{v}`")))
        };
        let spec = match get("model")?.as_str() {
            "vae" => ModelSpec::Vae(ModelConfig {
                n_points: num("n_points")?,
                latent_dim: num("latent_dim")?,
                encoder: match get("encoder")?.as_str() {
                    "pointnet" => EncoderKind::PointNet,
                    "transformer" => EncoderKind::Transformer,
                    o => return Err(ModelError::Sidecar(format!("unknown encoder `{o}`"))),
                },
                decoder: match get("decoder")?.as_str() {
                    "mlp" => DecoderKind::Mlp,
                    "nade" => DecoderKind::Nade,
                    o => return Err(ModelError::Sidecar(format!("unknown decoder `{o}`"))),
                },
                flow_layers: num("flow_layers")?,
                flow_hidden: num("flow_hidden")?,
                nade_groups: num("nade_groups")?,
                nade_group_latent: num("nade_group_latent")?,
                nade_widths: parse_list(&get("nade_widths")?)?,
                nade_embed_widths: parse_list(&get("nade_embed_widths")?)?,
                transformer: TransformerConfig {
                    layers: num("transformer_layers")?,
                    heads: num("transformer_heads")?,
                    model_dim: num("transformer_model_dim")?,
                    ff_dim: num("transformer_ff_dim")?,
                    embed_widths: parse_list(&get("transformer_embed_widths")?)?,
                },
                conv_widths: parse_list(&get("conv_widths")?)?,
                encoder_fc: parse_list(&get("encoder_fc")?)?,
                decoder_widths: parse_list(&get("decoder_widths")?)?,
                sort_axis: axis("sort_axis")?,
            }),
            "made" => ModelSpec::Made(MadeConfig {
                n_points: num("n_points")?,
                hidden: num("hidden")?,
                layers: num("layers")?,
                sort_axis: axis("sort_axis")?,
            }),
            o => return Err(ModelError::Sidecar(format!("unknown model `{o}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}
