use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Scheme, StanceLabel};
use crate::embed_store::EmbeddingStore;
use crate::error::{Error, Result};
use crate::metric::nn::{argmax, Linear, Parameters, ProjectionParams};
use crate::metric::softmax::{cross_entropy_grad, fit_softmax, FitConfig, SoftmaxModel};

/// Shape of the downstream classifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StanceArch {
    /// A single affine layer onto the class logits.
    Linear,
    /// The metric projection shape followed by an affine head.
    Mlp { hidden_dim: usize, proj_dim: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StanceConfig {
    pub arch: StanceArch,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub val_fraction: f64,
    pub patience: usize,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
}

impl Default for StanceConfig {
    fn default() -> Self {
        StanceConfig {
            arch: StanceArch::Linear,
            lr: 5e-5,
            batch_size: 64,
            epochs: 10,
            val_fraction: 0.1,
            patience: 2,
            finetune_epochs: 20,
            finetune_lr: 5e-5,
        }
    }
}

impl StanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.finetune_lr > 0.0) {
            return Err(Error::invalid("stance learning rates must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("stance batch_size must be at least 1"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid("stance val_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StanceClassifierParams {
    pub scheme: Scheme,
    pub hidden: Option<ProjectionParams<f32>>,
    pub head: Linear<f32>,
}

impl StanceClassifierParams {
    pub fn init(in_dim: usize, scheme: Scheme, arch: &StanceArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = scheme.num_classes();
        match *arch {
            StanceArch::Linear => StanceClassifierParams {
                scheme,
                hidden: None,
                head: Linear::xavier(in_dim, classes, &mut rng),
            },
            StanceArch::Mlp { hidden_dim, proj_dim } => StanceClassifierParams {
                scheme,
                hidden: Some(ProjectionParams::xavier(in_dim, hidden_dim, proj_dim, &mut rng)),
                head: Linear::xavier(proj_dim, classes, &mut rng),
            },
        }
    }

    pub fn predict(&self, x: &[f32]) -> Result<StanceLabel> {
        let logits = self.logits(x)?;
        Ok(self.scheme.labels()[argmax(&logits)])
    }

    pub fn predict_all(&self, xs: &[&[f32]]) -> Result<Vec<StanceLabel>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

impl Parameters<f32> for StanceClassifierParams {
    fn tensors(&self) -> Vec<&[f32]> {
        let mut v = self.hidden.as_ref().map(|h| h.tensors()).unwrap_or_default();
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut v = self.hidden.as_mut().map(|h| h.tensors_mut()).unwrap_or_default();
        v.extend(self.head.tensors_mut());
        v
    }
}

impl SoftmaxModel for StanceClassifierParams {
    fn num_classes(&self) -> usize {
        self.head.out_dim
    }

    fn logits(&self, x: &[f32]) -> Result<Vec<f32>> {
        match &self.hidden {
            Some(h) => Ok(self.head.forward(&h.forward(x)?)),
            None => self.head.logits(x),
        }
    }

    fn accumulate(&self, x: &[f32], label: usize, grads: &mut Self) -> Result<f64> {
        match &self.hidden {
            None => self.head.accumulate(x, label, &mut grads.head),
            Some(h) => {
                let cache = h.forward_cached(x)?;
                let logits = self.head.forward(&cache.output);
                let (loss, g) = cross_entropy_grad(&logits, label);
                let g_hidden = self.head.backward(&cache.output, &g, &mut grads.head);
                h.backward(&cache, &g_hidden, grads.hidden.as_mut().expect("same shape"));
                Ok(loss)
            }
        }
    }

    fn zeros_like(&self) -> Self {
        StanceClassifierParams {
            scheme: self.scheme,
            hidden: self.hidden.as_ref().map(|h| h.zeros_like()),
            head: Linear::zeros(self.head.in_dim, self.head.out_dim),
        }
    }
}

/// Embeddings and gold labels of a dataset, in dataset order.
pub struct LabeledEmbeddings<'a> {
    pub scheme: Scheme,
    pub ids: Vec<u64>,
    pub xs: Vec<&'a [f32]>,
    pub labels: Vec<StanceLabel>,
}

impl<'a> LabeledEmbeddings<'a> {
    pub fn from_dataset(dataset: &Dataset, store: &'a EmbeddingStore) -> Result<Self> {
        let mut xs = Vec::with_capacity(dataset.len());
        for ex in dataset.iter() {
            xs.push(store.vector(ex.id)?);
        }
        Ok(LabeledEmbeddings {
            scheme: dataset.scheme(),
            ids: dataset.ids(),
            xs,
            labels: dataset.iter().map(|e| e.stance).collect(),
        })
    }

    /// Subset by ids, in the given order.
    pub fn from_ids(dataset: &Dataset, ids: &[u64], store: &'a EmbeddingStore) -> Result<Self> {
        let mut xs = Vec::with_capacity(ids.len());
        let mut labels = Vec::with_capacity(ids.len());
        for &id in ids {
            let ex = dataset
                .get(id)
                .ok_or_else(|| Error::invalid(format!("id {id} not in dataset")))?;
            xs.push(store.vector(id)?);
            labels.push(ex.stance);
        }
        Ok(LabeledEmbeddings {
            scheme: dataset.scheme(),
            ids: ids.to_vec(),
            xs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

fn class_indices(data: &LabeledEmbeddings, scheme: Scheme) -> Result<Vec<usize>> {
    data.labels
        .iter()
        .map(|l| {
            if l.scheme() != scheme {
                Err(Error::SchemeMismatch {
                    expected: scheme.to_string(),
                    found: l.scheme().to_string(),
                })
            } else {
                Ok(l.index())
            }
        })
        .collect()
}

/// Trains a classifier on source embeddings by cross-entropy with Adam and
/// validation early stopping.
pub fn train_stance(data: &LabeledEmbeddings, cfg: &StanceConfig, seed: u64) -> Result<StanceClassifierParams> {
    cfg.validate()?;
    let dim = match data.xs.first() {
        Some(x) => x.len(),
        None => return Err(Error::invalid("no source examples")),
    };
    let labels = class_indices(data, data.scheme)?;
    let mut present = labels.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::invalid("stance training needs at least two classes"));
    }
    let init = StanceClassifierParams::init(dim, data.scheme, &cfg.arch, seed);
    let fit = FitConfig {
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        val_fraction: Some(cfg.val_fraction),
        patience: cfg.patience,
        seed,
    };
    Ok(fit_softmax(init, &data.xs, &labels, &fit)?.0)
}

/// Continues training on the shot set only, for a fixed number of epochs
/// (full batch whenever the shots fit in one batch).
pub fn finetune(
    params: &StanceClassifierParams,
    shots: &LabeledEmbeddings,
    cfg: &StanceConfig,
    seed: u64,
) -> Result<StanceClassifierParams> {
    if shots.is_empty() {
        return Err(Error::invalid("no few-shot examples"));
    }
    let labels = class_indices(shots, params.scheme)?;
    let fit = FitConfig {
        lr: cfg.finetune_lr,
        batch_size: cfg.batch_size,
        epochs: cfg.finetune_epochs,
        val_fraction: None,
        patience: 0,
        seed,
    };
    Ok(fit_softmax(params.clone(), &shots.xs, &labels, &fit)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Example, Split};
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> (Dataset, EmbeddingStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[4.0f32, 0.0], [-4.0, 0.0], [0.0, 4.0]];
        let mut examples = Vec::new();
        let mut rows = Vec::new();
        for i in 0..n {
            let c = i % 3;
            examples.push(Example {
                id: i as u64,
                text: "t".into(),
                target: "S".into(),
                stance: Scheme::ThreeWay.labels()[c],
                split: Split::Train,
            });
            rows.push((
                i as u64,
                vec![
                    centers[c][0] + rng.gen_range(-1.0..1.0),
                    centers[c][1] + rng.gen_range(-1.0..1.0),
                ],
            ));
        }
        (
            Dataset::new(Scheme::ThreeWay, examples).unwrap(),
            EmbeddingStore::from_rows(2, rows).unwrap(),
        )
    }

    fn cfg(arch: StanceArch) -> StanceConfig {
        StanceConfig {
            arch,
            lr: 0.02,
            epochs: 40,
            patience: 5,
            ..StanceConfig::default()
        }
    }

    fn accuracy(p: &StanceClassifierParams, data: &LabeledEmbeddings) -> f64 {
        let pred = p.predict_all(&data.xs).unwrap();
        pred.iter().zip(&data.labels).filter(|(a, b)| a == b).count() as f64 / data.len() as f64
    }

    #[test]
    fn separable_three_class_problem() {
        let (d, store) = blobs(300, 1);
        let data = LabeledEmbeddings::from_dataset(&d, &store).unwrap();
        for arch in [StanceArch::Linear, StanceArch::Mlp { hidden_dim: 8, proj_dim: 4 }] {
            let p = train_stance(&data, &cfg(arch), 3).unwrap();
            assert!(accuracy(&p, &data) >= 0.95);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (d, store) = blobs(60, 2);
        let data = LabeledEmbeddings::from_dataset(&d, &store).unwrap();
        let c = cfg(StanceArch::Linear);
        assert_eq!(train_stance(&data, &c, 9).unwrap(), train_stance(&data, &c, 9).unwrap());
        assert_ne!(train_stance(&data, &c, 9).unwrap(), train_stance(&data, &c, 10).unwrap());
    }

    #[test]
    fn degenerate_inputs() {
        let (d, store) = blobs(30, 2);
        let one_class = Dataset::new(
            Scheme::ThreeWay,
            d.iter().filter(|e| e.stance == StanceLabel::Favor).cloned().collect(),
        )
        .unwrap();
        let data = LabeledEmbeddings::from_dataset(&one_class, &store).unwrap();
        assert!(train_stance(&data, &cfg(StanceArch::Linear), 0).is_err());
        let empty = LabeledEmbeddings::from_dataset(&Dataset::empty(Scheme::ThreeWay), &store).unwrap();
        assert!(train_stance(&empty, &cfg(StanceArch::Linear), 0).is_err());
    }

    #[test]
    fn zero_epoch_finetune_is_identity() {
        let (d, store) = blobs(30, 4);
        let data = LabeledEmbeddings::from_dataset(&d, &store).unwrap();
        let p = train_stance(&data, &cfg(StanceArch::Linear), 0).unwrap();
        let c = StanceConfig {
            finetune_epochs: 0,
            ..cfg(StanceArch::Linear)
        };
        assert_eq!(finetune(&p, &data, &c, 1).unwrap(), p);
    }

    #[test]
    fn finetune_rejects_scheme_mismatch() {
        let (d, store) = blobs(30, 4);
        let data = LabeledEmbeddings::from_dataset(&d, &store).unwrap();
        let p = StanceClassifierParams::init(2, Scheme::FourWay, &StanceArch::Linear, 0);
        assert!(matches!(
            finetune(&p, &data, &StanceConfig::default(), 0),
            Err(Error::SchemeMismatch { .. })
        ));
    }
}
