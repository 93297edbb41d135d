use std::cell::Cell;

use super::losses::{vae_loss_graph, KlEstimator, LossBreakdown};
use super::trainer::Network;
use super::TrainingError;
use crate::geometry::PointCloud;
use crate::metrics::{coverage, jsd, mmd, ChamferMode, LossStats, MetricsReport, DEFAULT_JSD_GRID};
use crate::numeric::{Graph, ParameterStore};
use crate::rng::{self, streams, Rng};

/// What [`evaluate`] needs from a model.
pub trait PointModel {
    /// Reconstruction of `cloud` and its loss terms.
    fn reconstruct(&self, cloud: &PointCloud) -> Result<(PointCloud, LossBreakdown), TrainingError>;
    /// One unconditional sample.
    fn sample(&self, rng: &mut Rng) -> Result<PointCloud, TrainingError>;
}

/// A network paired with its parameters.
pub struct TrainedModel<'a> {
    pub network: &'a Network,
    pub store: &'a ParameterStore,
}

impl PointModel for TrainedModel<'_> {
    fn reconstruct(&self, cloud: &PointCloud) -> Result<(PointCloud, LossBreakdown), TrainingError> {
        match self.network {
            Network::Vae(model) => {
                let g = Graph::new();
                let eps = vec![0.0; model.config().latent_dim];
                let (nodes, f) = vae_loss_graph(&g, model, self.store, cloud, &eps, 1.0, KlEstimator::Analytic)?;
                let out = PointCloud::from_tensor(&g.value(f.points)).map_err(crate::models::ModelError::from)?;
                Ok((out, LossBreakdown::new(g.scalar(nodes.kl), g.scalar(nodes.recon))))
            }
            Network::Made(_) => Err(TrainingError::Unsupported(
                "the MADE model has no encoder; use generation mode".into(),
            )),
        }
    }

    fn sample(&self, rng: &mut Rng) -> Result<PointCloud, TrainingError> {
        Ok(match self.network {
            Network::Vae(model) => model.sample(self.store, rng)?,
            Network::Made(model) => model.sample(self.store, rng)?.cloud,
        })
    }
}

/// Reconstructs every cloud perfectly; samples cycle through a fixed set.
pub struct IdentityModel {
    samples: Vec<PointCloud>,
    next: Cell<usize>,
}

impl IdentityModel {
    pub fn new(samples: Vec<PointCloud>) -> Self {
        Self {
            samples,
            next: Cell::new(0),
        }
    }
}

impl PointModel for IdentityModel {
    fn reconstruct(&self, cloud: &PointCloud) -> Result<(PointCloud, LossBreakdown), TrainingError> {
        Ok((cloud.clone(), LossBreakdown::new(0.0, 0.0)))
    }

    fn sample(&self, _rng: &mut Rng) -> Result<PointCloud, TrainingError> {
        if self.samples.is_empty() {
            return Err(TrainingError::EmptyDataset);
        }
        let i = self.next.get();
        self.next.set(i + 1);
        Ok(self.samples[i % self.samples.len()].clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Encode and decode every reference; report set metrics and losses.
    Reconstruction,
    /// Draw `n_samples` from the prior; report set metrics only.
    Generation { n_samples: usize },
}

/// Set metrics of model outputs against `references`, plus mean loss terms
/// in reconstruction mode. Outputs are returned alongside the report.
pub fn evaluate(
    model: &dyn PointModel,
    references: &[PointCloud],
    mode: EvalMode,
    seed: u64,
    chamfer: ChamferMode,
) -> Result<(MetricsReport, Vec<PointCloud>), TrainingError> {
    let first = references.first().ok_or(TrainingError::EmptyDataset)?;
    if let Some((index, c)) = references.iter().enumerate().find(|(_, c)| c.len() != first.len()) {
        return Err(TrainingError::InconsistentPoints {
            index,
            expected: first.len(),
            got: c.len(),
        });
    }
    let (outputs, losses) = match mode {
        EvalMode::Reconstruction => {
            let mut outputs = Vec::with_capacity(references.len());
            let mut terms = Vec::with_capacity(references.len());
            for r in references {
                let (out, loss) = model.reconstruct(r)?;
                outputs.push(out);
                terms.push(loss);
            }
            let mean = LossBreakdown::mean(&terms);
            (outputs, Some(LossStats::new(mean.kl, mean.recon, first.len())))
        }
        EvalMode::Generation { n_samples } => {
            if n_samples == 0 {
                return Err(TrainingError::Config("generation needs at least one sample".into()));
            }
            let mut rng = rng::stream(seed, streams::SAMPLE);
            let outputs = (0..n_samples)
                .map(|_| model.sample(&mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            (outputs, None)
        }
    };
    let report = MetricsReport {
        jsd: jsd(&outputs, references, DEFAULT_JSD_GRID)?,
        coverage: coverage(&outputs, references, chamfer)?,
        mmd: mmd(&outputs, references, chamfer)?,
        losses,
    };
    Ok((report, outputs))
}
