//! The metric learner: a shared-weight projection trained with triplet loss,
//! followed by a frozen-projection softmax head that scores how much an
//! example looks like the source target.

pub mod adam;
pub mod checkpoint;
pub mod loss;
pub mod nn;
pub mod softmax;
pub mod train;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use loss::{grad_triplet, triplet_loss, TripletGrad};
pub use nn::{Linear, Parameters, ProjectionParams, Scalar};
pub use softmax::{fit_softmax, FitConfig, SoftmaxModel};
pub use train::{mean_projected_distances, train_metric, EpochRecord, History, TrainConfig};

use crate::embed_store::EmbeddingStore;
use crate::error::{Error, Result};
use crate::miner::Triplet;

/// Two-way head over projected vectors. Logit 0 is "source", logit 1 "noise".
pub type ClassifierParams = Linear<f32>;

pub const SOURCE_CLASS: usize = 0;
pub const NOISE_CLASS: usize = 1;

/// A projected vector with its source/noise label.
#[derive(Clone, Debug, PartialEq)]
pub struct Labeled {
    pub vector: Vec<f32>,
    pub is_source: bool,
}

fn class_of(is_source: bool) -> usize {
    if is_source {
        SOURCE_CLASS
    } else {
        NOISE_CLASS
    }
}

/// Fits the source-vs-noise head on frozen projections, with the same
/// batch size, epochs and early stopping as triplet training.
pub fn train_classifier_head(projected: &[Labeled], cfg: &TrainConfig) -> Result<ClassifierParams> {
    cfg.validate()?;
    let dim = match projected.first() {
        Some(l) => l.vector.len(),
        None => return Err(Error::invalid("no projected examples")),
    };
    let n_source = projected.iter().filter(|l| l.is_source).count();
    if n_source == 0 || n_source == projected.len() {
        return Err(Error::invalid("classifier head needs both source and noise examples"));
    }
    let xs: Vec<&[f32]> = projected.iter().map(|l| l.vector.as_slice()).collect();
    let labels: Vec<usize> = projected.iter().map(|l| class_of(l.is_source)).collect();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed ^ 0x5eed_4ead);
    let init = Linear::xavier(dim, 2, &mut rng);
    let fit = FitConfig {
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        val_fraction: Some(cfg.val_fraction),
        patience: cfg.patience,
        seed: cfg.seed,
    };
    Ok(fit_softmax(init, &xs, &labels, &fit)?.0)
}

/// Projection plus head; produces the confidence that an example belongs to
/// the source target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricModel {
    pub projection: ProjectionParams<f32>,
    pub head: ClassifierParams,
}

impl MetricModel {
    pub fn input_dim(&self) -> usize {
        self.projection.in_dim()
    }

    pub fn project(&self, x: &[f32]) -> Result<Vec<f32>> {
        self.projection.forward(x)
    }

    pub fn logits(&self, x: &[f32]) -> Result<Vec<f32>> {
        let y = self.projection.forward(x)?;
        Ok(self.head.forward(&y))
    }

    pub fn confidence(&self, x: &[f32]) -> Result<f64> {
        confidence(x, &self.projection, &self.head)
    }

    pub fn predicts_source(&self, x: &[f32]) -> Result<bool> {
        Ok(nn::argmax(&self.logits(x)?) == SOURCE_CLASS)
    }
}

/// Softmax probability of the source class at the projection of `x`.
pub fn confidence(x: &[f32], proj: &ProjectionParams<f32>, head: &ClassifierParams) -> Result<f64> {
    let y = proj.forward(x)?;
    if head.in_dim != y.len() || head.out_dim != 2 {
        return Err(Error::DimMismatch {
            expected: y.len(),
            got: head.in_dim,
        });
    }
    Ok(confidence_from_logits(&head.forward(&y)))
}

pub fn confidence_from_logits(logits: &[f32]) -> f64 {
    nn::softmax(logits)[SOURCE_CLASS]
}

/// Fraction of examples whose argmax class matches the label.
pub fn eval_binary_accuracy(test: &[(Vec<f32>, bool)], model: &MetricModel) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let mut correct = 0usize;
    for (x, is_source) in test {
        if model.predicts_source(x)? == *is_source {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Histories of both training phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricFit {
    pub model: MetricModel,
    pub triplet_history: History,
}

/// Runs both phases: triplet training, then the head on the projections of
/// the given source and noise ids.
pub fn fit_metric_model(
    triplets: &[Triplet],
    store: &EmbeddingStore,
    source_ids: &[u64],
    noise_ids: &[u64],
    cfg: &TrainConfig,
) -> Result<MetricFit> {
    let (projection, triplet_history) = train_metric(triplets, store, cfg)?;
    let mut projected = Vec::with_capacity(source_ids.len() + noise_ids.len());
    for (ids, is_source) in [(source_ids, true), (noise_ids, false)] {
        for &id in ids {
            projected.push(Labeled {
                vector: projection.forward(store.vector(id)?)?,
                is_source,
            });
        }
    }
    let head = train_classifier_head(&projected, cfg)?;
    Ok(MetricFit {
        model: MetricModel { projection, head },
        triplet_history,
    })
}
