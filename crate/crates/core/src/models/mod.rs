//! Encoders, decoders, latent flow and the MADE density model.
//!
//! Every component declares its parameters as [`ParamSpec`]s and builds its
//! computation on a caller-supplied [`Graph`](crate::numeric::Graph), so one
//! graph can hold an entire forward pass and its loss.

mod config;
mod decoder;
mod encoder;
mod flow;
mod latent;
mod layers;
mod loss_op;
mod made;
mod vae;

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::numeric::NumericError;

pub use config::{DecoderKind, EncoderKind, MadeConfig, ModelConfig, ModelSpec, TransformerConfig};
pub use decoder::{Decoder, MlpDecoder, NadeDecoder, NadeOutput};
pub use encoder::{AttentionBlock, Encoder, EncoderOutput, PointNetEncoder, TransformerEncoder};
pub use flow::{log_posterior, log_standard_normal, FlowOutput, IafFlow, IafLayer, GATE_OFFSET};
pub use latent::{reparameterize, LatentNodes, LatentSample};
pub use layers::{check_store, init_store, Init, Linear, Mlp, ParamSpec};
pub use loss_op::ChamferLoss;
pub use made::{Made, MadeOutput, MadeSample};
pub use vae::{Vae, VaeForward};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("malformed model sidecar: {0}")]
    Sidecar(String),
    #[error("expected {expected} points, got {got}")]
    PointCount { expected: usize, got: usize },
    #[error("input cloud is not sorted along the {0} axis")]
    Unsorted(&'static str),
    #[error("checkpoint does not match the architecture: {0}")]
    ArchitectureMismatch(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
