use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use super::losses::{made_loss_graph, vae_loss_graph, KlEstimator, LossBreakdown};
use super::{TrainConfig, TrainingError};
use crate::geometry::PointCloud;
use crate::models::{Made, ModelError, ModelSpec, ParamSpec, Vae};
use crate::numeric::{read_checkpoint, write_checkpoint, Adam, Graph, ParameterStore};
use crate::rng::{self, streams, Rng};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SIDECAR_FILE: &str = "model.txt";

/// Either trainable model family.
#[derive(Clone, Debug)]
pub enum Network {
    Vae(Vae),
    Made(Made),
}

impl Network {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self, ModelError> {
        Ok(match spec {
            ModelSpec::Vae(c) => Network::Vae(Vae::new(c)?),
            ModelSpec::Made(c) => Network::Made(Made::new(c)?),
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Network::Vae(m) => ModelSpec::Vae(m.config().clone()),
            Network::Made(m) => ModelSpec::Made(m.config().clone()),
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        match self {
            Network::Vae(m) => m.specs(),
            Network::Made(m) => m.specs(),
        }
    }

    pub fn n_points(&self) -> usize {
        self.spec().n_points()
    }

    pub fn init_params(&self, seed: u64) -> Result<ParameterStore, ModelError> {
        match self {
            Network::Vae(m) => m.init_params(seed),
            Network::Made(m) => m.init_params(seed),
        }
    }

    pub fn check_store(&self, store: &ParameterStore) -> Result<(), ModelError> {
        match self {
            Network::Vae(m) => m.check_store(store),
            Network::Made(m) => m.check_store(store),
        }
    }

    /// Checkpoint plus architecture sidecar into `dir`.
    pub fn save(&self, store: &ParameterStore, dir: &Path) -> Result<(), TrainingError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| TrainingError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        write_checkpoint(store, &dir.join(CHECKPOINT_FILE), true)?;
        let sidecar = dir.join(SIDECAR_FILE);
        let tmp = dir.join(format!("{SIDECAR_FILE}.tmp"));
        fs::write(&tmp, self.spec().to_sidecar()).map_err(io(&tmp))?;
        fs::rename(&tmp, &sidecar).map_err(io(&sidecar))?;
        Ok(())
    }

    /// Rebuild a model from a directory written by [`Network::save`].
    pub fn load(dir: &Path) -> Result<(Self, ParameterStore), TrainingError> {
        let sidecar = dir.join(SIDECAR_FILE);
        let text = fs::read_to_string(&sidecar).map_err(|source| TrainingError::Io {
            path: sidecar.display().to_string(),
            source,
        })?;
        let network = Network::from_spec(&ModelSpec::from_sidecar(&text)?)?;
        let store = read_checkpoint(&dir.join(CHECKPOINT_FILE))?;
        network.check_store(&store)?;
        Ok((network, store))
    }

    /// Input as the model consumes it: MADE sees clouds sorted along its axis.
    fn prepare(&self, cloud: &PointCloud) -> PointCloud {
        match self {
            Network::Made(m) => cloud.sort_along_axis(m.config().sort_axis),
            Network::Vae(_) => cloud.clone(),
        }
    }
}

/// Mean terms of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: LossBreakdown,
    /// Mean of the differentiated objective.
    pub objective: f64,
    /// Mean `sum sigma` for MADE.
    pub sigma_sum: Option<f64>,
}

/// One model, its parameters and optimizer state.
pub struct Trainer {
    pub network: Network,
    pub store: ParameterStore,
    adam: Adam,
    config: TrainConfig,
    noise: Rng,
    steps: usize,
}

impl Trainer {
    pub fn new(network: Network, store: ParameterStore, config: &TrainConfig) -> Result<Self, TrainingError> {
        config.validate()?;
        network.check_store(&store)?;
        Ok(Self {
            adam: Adam::new(config.lr)?,
            noise: rng::stream(config.seed, streams::LATENT),
            network,
            store,
            config: config.clone(),
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Loss, gradient and Adam update over one batch. Each cloud gets its
    /// own graph and one noise draw; gradients are averaged.
    pub fn step(&mut self, batch: &[PointCloud]) -> Result<StepStats, TrainingError> {
        if batch.is_empty() {
            return Err(TrainingError::EmptyDataset);
        }
        let scale = 1.0 / batch.len() as f64;
        let mut terms = Vec::with_capacity(batch.len());
        let mut objective = 0.0;
        let mut sigma_sum = 0.0;
        for cloud in batch {
            let g = Graph::new();
            match &self.network {
                Network::Vae(model) => {
                    let eps = model.sample_latent(&mut self.noise);
                    let (nodes, _) = vae_loss_graph(
                        &g,
                        model,
                        &self.store,
                        cloud,
                        &eps,
                        self.config.kl_weight,
                        KlEstimator::Analytic,
                    )?;
                    let grads = g.backward(nodes.objective)?;
                    g.accumulate_param_grads(&grads, &mut self.store, scale)?;
                    terms.push(LossBreakdown::new(g.scalar(nodes.kl), g.scalar(nodes.recon)));
                    objective += g.scalar(nodes.objective);
                }
                Network::Made(model) => {
                    let flat = model.flatten_input(&self.network.prepare(cloud))?;
                    let (loss, out) = made_loss_graph(&g, model, &self.store, &flat, self.config.sigma_l1_weight)?;
                    let grads = g.backward(loss)?;
                    g.accumulate_param_grads(&grads, &mut self.store, scale)?;
                    terms.push(LossBreakdown::new(0.0, -g.scalar(out.log_prob)));
                    objective += g.scalar(loss);
                    sigma_sum += g.scalar(out.sigma_sum);
                }
            }
        }
        self.adam.step(&mut self.store)?;
        self.steps += 1;
        Ok(StepStats {
            loss: LossBreakdown::mean(&terms),
            objective: objective * scale,
            sigma_sum: matches!(self.network, Network::Made(_)).then_some(sigma_sum * scale),
        })
    }

    /// Mean loss terms without updating: VAEs use `eps = 0`, MADE the exact
    /// negative log-likelihood.
    pub fn evaluate_losses(&self, clouds: &[PointCloud]) -> Result<LossBreakdown, TrainingError> {
        let mut terms = Vec::with_capacity(clouds.len());
        for cloud in clouds {
            let g = Graph::new();
            match &self.network {
                Network::Vae(model) => {
                    let eps = vec![0.0; model.config().latent_dim];
                    let (nodes, _) =
                        vae_loss_graph(&g, model, &self.store, cloud, &eps, 1.0, KlEstimator::Analytic)?;
                    terms.push(LossBreakdown::new(g.scalar(nodes.kl), g.scalar(nodes.recon)));
                }
                Network::Made(model) => {
                    let nll = -model.log_prob(&self.store, &self.network.prepare(cloud))?;
                    terms.push(LossBreakdown::new(0.0, nll));
                }
            }
        }
        Ok(LossBreakdown::mean(&terms))
    }

    /// Current `sum sigma` of a MADE model on `cloud`.
    pub fn sigma_sum(&self, cloud: &PointCloud) -> Result<Option<f64>, TrainingError> {
        match &self.network {
            Network::Made(model) => {
                let flat = model.flatten_input(&self.network.prepare(cloud))?;
                let g = Graph::new();
                let (_, out) = made_loss_graph(&g, model, &self.store, &flat, 0.0)?;
                Ok(Some(g.scalar(out.sigma_sum)))
            }
            Network::Vae(_) => Ok(None),
        }
    }
}

/// One line of the loss log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: LossBreakdown,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} split={} nelbo={} kl={} recon={}",
            self.epoch, self.split, self.loss.nelbo, self.loss.kl, self.loss.recon
        )
    }
}

pub struct FitResult {
    pub network: Network,
    pub store: ParameterStore,
    pub history: Vec<EpochLog>,
}

/// Deterministic `(train, validation)` index split.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, streams::SPLIT));
    let n_val = ((n as f64) * val_fraction).floor() as usize;
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Train `network` from fresh parameters on `dataset`.
///
/// Every epoch shuffles the training split, runs mini-batch Adam steps and
/// appends `epoch=… split=… nelbo=… kl=… recon=…` lines to `log` for the
/// training split and, when nonempty, the validation split. Checkpoints go
/// to `config.checkpoint_dir` every `eval_every` epochs and at the end.
pub fn fit(
    dataset: &[PointCloud],
    network: Network,
    config: &TrainConfig,
    log: &mut dyn Write,
) -> Result<FitResult, TrainingError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    let expected = network.n_points();
    if let Some((index, c)) = dataset.iter().enumerate().find(|(_, c)| c.len() != expected) {
        return Err(TrainingError::InconsistentPoints {
            index,
            expected,
            got: c.len(),
        });
    }
    let store = network.init_params(config.seed)?;
    let mut trainer = Trainer::new(network, store, config)?;
    let (mut train, val) = split_indices(dataset.len(), config.val_fraction, config.seed);
    let val_clouds: Vec<PointCloud> = val.iter().map(|&i| dataset[i].clone()).collect();
    let mut shuffle = rng::stream(config.seed, streams::SHUFFLE);
    let mut history = Vec::new();
    let write_err = |source| TrainingError::Io {
        path: "loss log".into(),
        source,
    };
    for epoch in 1..=config.epochs {
        train.shuffle(&mut shuffle);
        let mut terms = Vec::with_capacity(train.len());
        for chunk in train.chunks(config.batch_size) {
            let batch: Vec<PointCloud> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let stats = trainer.step(&batch)?;
            terms.extend(std::iter::repeat_n(stats.loss, batch.len()));
        }
        let mut lines = vec![EpochLog {
            epoch,
            split: "train",
            loss: LossBreakdown::mean(&terms),
        }];
        if !val_clouds.is_empty() {
            lines.push(EpochLog {
                epoch,
                split: "val",
                loss: trainer.evaluate_losses(&val_clouds)?,
            });
        }
        for line in lines {
            writeln!(log, "{line}").map_err(write_err)?;
            history.push(line);
        }
        if let Some(dir) = &config.checkpoint_dir {
            if epoch == config.epochs || (config.eval_every > 0 && epoch % config.eval_every == 0) {
                trainer.network.save(&trainer.store, dir)?;
            }
        }
    }
    Ok(FitResult {
        network: trainer.network,
        store: trainer.store,
        history,
    })
}
