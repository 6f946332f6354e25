use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::loss::{accumulate_triplet_grad, triplet_loss};
use super::nn::{Parameters, ProjectionParams};
use crate::embed_store::EmbeddingStore;
use crate::error::{Error, Result};
use crate::miner::Triplet;

/// Hyperparameters for triplet training and the classifier head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub margin: f64,
    pub val_fraction: f64,
    pub patience: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    pub proj_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            batch_size: 64,
            epochs: 10,
            margin: 1.0,
            val_fraction: 0.1,
            patience: 2,
            seed: 0,
            hidden_dim: 256,
            proj_dim: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr must be positive"));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::invalid("margin must be non-negative"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid("val_fraction must lie in (0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.hidden_dim == 0 || self.proj_dim == 0 {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Per-epoch losses. Epoch 0 holds the losses of the initial parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.records.get(self.best_epoch).and_then(|r| r.val_loss)
    }

    pub fn initial_train_loss(&self) -> f64 {
        self.records[0].train_loss
    }

    pub fn final_train_loss(&self) -> f64 {
        self.records.last().map(|r| r.train_loss).unwrap_or(f64::NAN)
    }

    /// CSV with header `epoch,train_loss,val_loss`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["epoch", "train_loss", "val_loss"])?;
        for r in &self.records {
            wtr.write_record([
                r.epoch.to_string(),
                format!("{:e}", r.train_loss),
                r.val_loss.map(|v| format!("{v:e}")).unwrap_or_default(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<history>", e))?;
        Ok(())
    }
}

/// Triplets resolved to their embedding rows.
struct Resolved<'a> {
    a: &'a [f32],
    p: &'a [f32],
    n: &'a [f32],
}

fn resolve<'a>(triplets: &[Triplet], store: &'a EmbeddingStore) -> Result<Vec<Resolved<'a>>> {
    triplets
        .iter()
        .map(|t| {
            Ok(Resolved {
                a: store.vector(t.anchor)?,
                p: store.vector(t.positive)?,
                n: store.vector(t.negative)?,
            })
        })
        .collect()
}

/// Splits triplets into (train, validation) index sets. Whole anchor groups go
/// to validation so held-out triplets never share an anchor with training
/// ones; with a single anchor the split falls back to individual triplets.
pub fn split_triplets(triplets: &[Triplet], val_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let n = triplets.len();
    let target = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, t) in triplets.iter().enumerate() {
        groups.entry(t.anchor).or_default().push(i);
    }
    let mut val = Vec::new();
    if groups.len() >= 2 {
        let mut anchors: Vec<u64> = groups.keys().copied().collect();
        anchors.shuffle(rng);
        for a in anchors {
            if val.len() >= target {
                break;
            }
            if val.len() + groups[&a].len() >= n {
                continue;
            }
            val.extend_from_slice(&groups[&a]);
        }
    }
    if val.is_empty() {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        val = idx[..target].to_vec();
    }
    val.sort_unstable();
    let mut is_val = vec![false; n];
    for &i in &val {
        is_val[i] = true;
    }
    let train = (0..n).filter(|&i| !is_val[i]).collect();
    (train, val)
}

fn mean_triplet_loss(params: &ProjectionParams<f32>, data: &[Resolved], idx: &[usize], margin: f32) -> Result<f64> {
    let mut total = 0.0f64;
    for &i in idx {
        let r = &data[i];
        let a = params.forward(r.a)?;
        let p = params.forward(r.p)?;
        let n = params.forward(r.n)?;
        total += triplet_loss(&a, &p, &n, margin)? as f64;
    }
    Ok(total / idx.len().max(1) as f64)
}

/// Trains the projection on mean triplet loss with mini-batch Adam.
///
/// Returns the parameters of the epoch with the lowest validation loss
/// (epoch 0 is the initialisation). Training stops after `patience` epochs
/// without improvement, or after an epoch in which no triplet had an active
/// hinge, since nothing is left to learn.
pub fn train_metric(
    triplets: &[Triplet],
    store: &EmbeddingStore,
    cfg: &TrainConfig,
) -> Result<(ProjectionParams<f32>, History)> {
    cfg.validate()?;
    if triplets.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 triplets, got {}",
            triplets.len()
        )));
    }
    let data = resolve(triplets, store)?;
    let margin = cfg.margin as f32;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut train_idx, val_idx) = split_triplets(triplets, cfg.val_fraction, &mut rng);
    let mut params = ProjectionParams::<f32>::xavier(store.dim(), cfg.hidden_dim, cfg.proj_dim, &mut rng);

    let mut history = History::default();
    let mut best_val = mean_triplet_loss(&params, &data, &val_idx, margin)?;
    history.records.push(EpochRecord {
        epoch: 0,
        train_loss: mean_triplet_loss(&params, &data, &train_idx, margin)?,
        val_loss: Some(best_val),
    });
    let mut best = params.clone();
    let mut state = AdamState::new(&params);
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut any_active = false;
        for (b, batch) in train_idx.chunks(cfg.batch_size).enumerate() {
            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0f64;
            for &i in batch {
                let r = &data[i];
                let ca = params.forward_cached(r.a)?;
                let cp = params.forward_cached(r.p)?;
                let cn = params.forward_cached(r.n)?;
                let (loss, active) = accumulate_triplet_grad(&params, &ca, &cp, &cn, margin, &mut grads);
                any_active |= active;
                batch_loss += loss as f64;
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged(format!(
                    "triplet loss at epoch {epoch}, batch {b} (loss {batch_loss})"
                )));
            }
            grads.scale(1.0 / batch.len() as f32);
            adam_step(&mut params, &grads, &mut state, cfg.lr)?;
        }

        let train_loss = mean_triplet_loss(&params, &data, &train_idx, margin)?;
        let val_loss = mean_triplet_loss(&params, &data, &val_idx, margin)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Diverged(format!(
                "loss at epoch {epoch}: train {train_loss}, val {val_loss}"
            )));
        }
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: Some(val_loss),
        });
        if val_loss < best_val {
            best_val = val_loss;
            best = params.clone();
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if !any_active || since_best >= cfg.patience {
            history.stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    Ok((best, history))
}

/// Mean projected distances (anchor-positive, anchor-negative) over a set of
/// triplets.
pub fn mean_projected_distances(
    params: &ProjectionParams<f32>,
    triplets: &[Triplet],
    store: &EmbeddingStore,
) -> Result<(f64, f64)> {
    let data = resolve(triplets, store)?;
    let (mut ap, mut an) = (0.0f64, 0.0f64);
    for r in &data {
        let a = params.forward(r.a)?;
        let p = params.forward(r.p)?;
        let n = params.forward(r.n)?;
        ap += crate::embed_store::euclidean_distance(&a, &p)?;
        an += crate::embed_store::euclidean_distance(&a, &n)?;
    }
    let k = data.len().max(1) as f64;
    Ok((ap / k, an / k))
}
