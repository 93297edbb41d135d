#![allow(dead_code)]

use pointgen::geometry::PointCloud;
use pointgen::models::{DecoderKind, EncoderKind, ModelConfig, TransformerConfig};
use pointgen::numeric::{Graph, NodeId, ParameterStore};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect(),
    )
    .unwrap()
}

pub fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

/// A model small enough for exhaustive finite differences.
pub fn tiny_config(n_points: usize, latent: usize) -> ModelConfig {
    ModelConfig {
        n_points,
        latent_dim: latent,
        encoder: EncoderKind::PointNet,
        decoder: DecoderKind::Mlp,
        flow_layers: 0,
        nade_groups: 2,
        nade_group_latent: 3,
        transformer: TransformerConfig {
            layers: 1,
            heads: 2,
            model_dim: 4,
            ff_dim: 6,
            embed_widths: vec![5],
        },
        conv_widths: vec![6, 5],
        encoder_fc: vec![7, 6],
        decoder_widths: vec![6, 7],
        flow_hidden: 5,
        nade_widths: vec![6],
        nade_embed_widths: vec![4],
        ..ModelConfig::default()
    }
}

/// Worst relative error between backprop and central differences over every
/// parameter scalar (strided when a tensor holds more than `max_per_param`).
pub fn max_param_grad_error(
    store: &ParameterStore,
    max_per_param: usize,
    build: impl Fn(&Graph, &ParameterStore) -> NodeId,
) -> (f64, String) {
    let g = Graph::new();
    let loss = build(&g, store);
    let grads = g.backward(loss).unwrap();
    let mut analytic = store.clone();
    analytic.zero_grads();
    g.accumulate_param_grads(&grads, &mut analytic, 1.0).unwrap();

    let eval = |s: &ParameterStore| {
        let g = Graph::new();
        let l = build(&g, s);
        g.scalar(l)
    };
    let h = 1e-6;
    let mut worst = (0.0, String::new());
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let len = store.get(&name).unwrap().len();
        let stride = len.div_ceil(max_per_param).max(1);
        for i in (0..len).step_by(stride) {
            let mut plus = store.clone();
            plus.entry_mut(&name).unwrap().value.data_mut()[i] += h;
            let mut minus = store.clone();
            minus.entry_mut(&name).unwrap().value.data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.grad(&name).unwrap().data()[i];
            let err = rel_err(a, numeric);
            if err > worst.0 {
                worst = (err, format!("{name}[{i}]: backprop {a} vs numeric {numeric}"));
            }
        }
    }
    worst
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}
