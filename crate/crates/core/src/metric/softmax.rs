//! Cross-entropy training for softmax classifiers (the source-vs-noise head
//! and the downstream stance classifier share this loop).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::nn::{softmax, Linear, Parameters};
use super::train::{EpochRecord, History};
use crate::error::{Error, Result};

pub trait SoftmaxModel: Parameters<f32> + Clone {
    fn num_classes(&self) -> usize;

    fn logits(&self, x: &[f32]) -> Result<Vec<f32>>;

    /// Adds the gradient of `-log softmax(logits)[label]` into `grads` and
    /// returns that loss.
    fn accumulate(&self, x: &[f32], label: usize, grads: &mut Self) -> Result<f64>;

    fn zeros_like(&self) -> Self;
}

/// Cross-entropy loss and `softmax - onehot` for one logit vector.
pub fn cross_entropy_grad(logits: &[f32], label: usize) -> (f64, Vec<f32>) {
    let probs = softmax(logits);
    let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
    let grad = probs
        .iter()
        .enumerate()
        .map(|(c, &p)| (p - if c == label { 1.0 } else { 0.0 }) as f32)
        .collect();
    (loss, grad)
}

impl SoftmaxModel for Linear<f32> {
    fn num_classes(&self) -> usize {
        self.out_dim
    }

    fn logits(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.in_dim {
            return Err(Error::DimMismatch {
                expected: self.in_dim,
                got: x.len(),
            });
        }
        Ok(self.forward(x))
    }

    fn accumulate(&self, x: &[f32], label: usize, grads: &mut Self) -> Result<f64> {
        let logits = self.logits(x)?;
        let (loss, g) = cross_entropy_grad(&logits, label);
        self.backward_params(x, &g, grads);
        Ok(loss)
    }

    fn zeros_like(&self) -> Self {
        Linear::zeros(self.in_dim, self.out_dim)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction held out for early stopping; `None` trains on everything for
    /// exactly `epochs` epochs.
    pub val_fraction: Option<f64>,
    pub patience: usize,
    pub seed: u64,
}

/// Mean cross-entropy over a set of examples.
pub fn mean_loss<M: SoftmaxModel>(model: &M, xs: &[&[f32]], labels: &[usize], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0f64;
    for &i in idx {
        let logits = model.logits(xs[i])?;
        total += cross_entropy_grad(&logits, labels[i]).0;
    }
    Ok(total / idx.len() as f64)
}

/// Splits `0..n` into (train, validation) by a seeded shuffle, keeping at
/// least one index on each side.
pub fn split_indices(n: usize, val_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n.saturating_sub(1));
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (train, val)
}

/// Mini-batch Adam on mean cross-entropy. With a validation fraction the
/// parameters of the best validation epoch are returned and training stops
/// after `patience` epochs without improvement.
pub fn fit_softmax<M: SoftmaxModel>(
    mut model: M,
    xs: &[&[f32]],
    labels: &[usize],
    cfg: &FitConfig,
) -> Result<(M, History)> {
    if xs.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    if xs.len() != labels.len() {
        return Err(Error::DimMismatch {
            expected: xs.len(),
            got: labels.len(),
        });
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.num_classes()) {
        return Err(Error::invalid(format!("label index {bad} out of range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut train_idx, val_idx) = match cfg.val_fraction {
        Some(f) if xs.len() >= 2 => split_indices(xs.len(), f, &mut rng),
        _ => ((0..xs.len()).collect(), Vec::new()),
    };
    let early_stop = !val_idx.is_empty();

    let mut history = History::default();
    let mut best = model.clone();
    let mut best_val = if early_stop {
        mean_loss(&model, xs, labels, &val_idx)?
    } else {
        f64::INFINITY
    };
    history.records.push(EpochRecord {
        epoch: 0,
        train_loss: mean_loss(&model, xs, labels, &train_idx)?,
        val_loss: if early_stop { Some(best_val) } else { None },
    });

    let mut state = AdamState::new(&model);
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(cfg.batch_size) {
            let mut grads = model.zeros_like();
            for &i in batch {
                model.accumulate(xs[i], labels[i], &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f32);
            adam_step(&mut model, &grads, &mut state, cfg.lr)?;
        }
        if !model.is_finite() {
            return Err(Error::Diverged(format!("classifier parameters at epoch {epoch}")));
        }
        let train_loss = mean_loss(&model, xs, labels, &train_idx)?;
        if !train_loss.is_finite() {
            return Err(Error::Diverged(format!("training loss at epoch {epoch}")));
        }
        let val_loss = if early_stop {
            Some(mean_loss(&model, xs, labels, &val_idx)?)
        } else {
            None
        };
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        match val_loss {
            Some(v) if v < best_val => {
                best_val = v;
                best = model.clone();
                history.best_epoch = epoch;
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                if since_best >= cfg.patience {
                    history.stopped_early = true;
                    break;
                }
            }
            None => {
                history.best_epoch = epoch;
            }
        }
    }
    if early_stop {
        Ok((best, history))
    } else {
        Ok((model, history))
    }
}
