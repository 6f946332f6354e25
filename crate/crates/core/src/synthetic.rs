//! Synthetic embedding benchmarks with known geometry.
//!
//! Two fixtures ship with the crate:
//!
//! * separability: two isotropic Gaussian clusters (source vs noise) whose
//!   centres are 4σ apart, for the metric model on its own;
//! * transfer: a source target, a destination whose train split mixes an
//!   on-topic subpopulation with clean labels and an off-topic one with noisy
//!   labels, and an unrelated noise target. Picking the on-topic shots is what
//!   makes fine-tuning pay off. The destination test split is on-topic only.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::corpus::{Dataset, Example, Scheme, Split, StanceLabel};
use crate::embed_store::{save_store, EmbeddingStore};
use crate::error::{Error, Result};
use crate::metric::TrainConfig;
use crate::stance::experiment::{ExperimentSettings, SelectionSettings};
use crate::stance::StanceConfig;

pub const DIM: usize = 32;

/// `centre + σ·z` with `z ~ N(0, I)`.
fn gaussian(rng: &mut ChaCha8Rng, centre: &[f32], sigma: f32) -> Vec<f32> {
    centre
        .iter()
        .map(|&c| c + sigma * rng.sample::<f32, _>(StandardNormal))
        .collect()
}

fn axis(entries: &[(usize, f32)]) -> Vec<f32> {
    let mut v = vec![0.0; DIM];
    for &(i, x) in entries {
        v[i] += x;
    }
    v
}

fn add(a: &[f32], b: &[f32]) -> Vec<f32> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn example(id: u64, target: &str, stance: StanceLabel, split: Split) -> Example {
    Example {
        id,
        text: format!("synthetic {target} #{id}"),
        target: target.to_string(),
        stance,
        split,
    }
}

/// Source and noise clusters for the metric model.
pub struct SeparabilityBenchmark {
    pub source_train: Dataset,
    pub noise_train: Dataset,
    pub source_test: Dataset,
    pub noise_test: Dataset,
    pub store: EmbeddingStore,
}

impl SeparabilityBenchmark {
    /// Held-out `(vector, is_source)` pairs.
    pub fn test_points(&self) -> Result<Vec<(Vec<f32>, bool)>> {
        let mut out = Vec::new();
        for (d, is_source) in [(&self.source_test, true), (&self.noise_test, false)] {
            for e in d.iter() {
                out.push((self.store.vector(e.id)?.to_vec(), is_source));
            }
        }
        Ok(out)
    }
}

/// Two `DIM`-dimensional unit-variance clusters at `±2·e0`, so the centres are
/// 4σ apart; `per_class` points per cluster in each split.
pub fn separability_benchmark(per_class: usize, seed: u64) -> Result<SeparabilityBenchmark> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres = [axis(&[(0, 2.0)]), axis(&[(0, -2.0)])];
    let labels = Scheme::ThreeWay.labels();
    let mut rows = Vec::new();
    let mut sets: Vec<Vec<Example>> = vec![Vec::new(); 4];
    let mut id = 0u64;
    for (slot, (split, cluster)) in [(Split::Train, 0), (Split::Train, 1), (Split::Test, 0), (Split::Test, 1)]
        .into_iter()
        .enumerate()
    {
        let target = if cluster == 0 { "SRC" } else { "NOISE" };
        for i in 0..per_class {
            sets[slot].push(example(id, target, labels[i % labels.len()], split));
            rows.push((id, gaussian(&mut rng, &centres[cluster], 1.0)));
            id += 1;
        }
    }
    let mut sets = sets.into_iter().map(|ex| Dataset::new(Scheme::ThreeWay, ex));
    let mut next = || sets.next().expect("four sets");
    Ok(SeparabilityBenchmark {
        source_train: next()?,
        noise_train: next()?,
        source_test: next()?,
        noise_test: next()?,
        store: EmbeddingStore::from_rows(DIM, rows)?,
    })
}

/// Training settings for the separability benchmark: library defaults with
/// a learning rate large enough to move the weights in 10 epochs.
pub fn separability_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        seed,
        ..TrainConfig::default()
    }
}

/// Sizes of the transfer benchmark.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TransferSizes {
    pub source: usize,
    pub destination_train: usize,
    pub destination_test: usize,
    pub noise: usize,
    /// Fraction of the destination train pool that is on-topic. The test
    /// split is entirely on-topic.
    pub aligned_fraction: f64,
    /// Fraction of off-topic destination-train labels drawn at random.
    pub label_noise: f64,
}

impl Default for TransferSizes {
    fn default() -> Self {
        TransferSizes {
            source: 600,
            destination_train: 600,
            destination_test: 600,
            noise: 600,
            aligned_fraction: 0.4,
            label_noise: 0.3,
        }
    }
}

pub struct TransferBenchmark {
    pub source: Dataset,
    pub destination: Dataset,
    pub noise: Dataset,
    pub store: EmbeddingStore,
    /// Destination ids drawn from the on-topic subpopulation.
    pub aligned: HashSet<u64>,
}

pub const SOURCE_TAG: &str = "SRC";
pub const DESTINATION_TAG: &str = "DST";
pub const NOISE_TAG: &str = "NOISE";

/// Per-class offsets in the plane spanned by `(u, v)`.
fn class_offset(class: usize, u: usize, v: usize, scale: f32) -> Vec<f32> {
    match class {
        0 => axis(&[(u, scale)]),
        1 => axis(&[(u, -scale)]),
        _ => axis(&[(v, scale)]),
    }
}

/// Geometry (σ = 1 everywhere):
///
/// * source: topic `3·e0`, class offsets of 2.5 on `e1`/`e2`;
/// * destination on-topic: topic `3·e0`, a faint copy of the source offsets
///   plus offsets of 2.5 on `e3`/`e4`;
/// * destination off-topic (train pool only): topic `-2·e0 + 3·e5`, offsets
///   of 2.0 on `e3`/`e4` but with the class mapping rotated by one, and a
///   `label_noise` share of labels replaced by uniform draws;
/// * noise: topic `3·e6`, no class structure.
pub fn transfer_benchmark(sizes: TransferSizes, seed: u64) -> Result<TransferBenchmark> {
    if !(0.0..=1.0).contains(&sizes.aligned_fraction) || !(0.0..=1.0).contains(&sizes.label_noise) {
        return Err(Error::invalid("fractions must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = Scheme::ThreeWay.labels();
    let mut rows = Vec::new();
    let mut id = 0u64;
    let mut next_id = || {
        id += 1;
        id - 1
    };

    let source_topic = axis(&[(0, 3.0)]);
    let mut source = Vec::new();
    for i in 0..sizes.source {
        let class = i % 3;
        let id = next_id();
        source.push(example(id, SOURCE_TAG, labels[class], Split::Train));
        rows.push((id, gaussian(&mut rng, &add(&source_topic, &class_offset(class, 1, 2, 2.5)), 1.0)));
    }

    let off_topic = axis(&[(0, -2.0), (5, 3.0)]);
    let mut destination = Vec::new();
    let mut aligned = HashSet::new();
    for (split, count) in [(Split::Train, sizes.destination_train), (Split::Test, sizes.destination_test)] {
        let n_aligned = match split {
            Split::Train => (count as f64 * sizes.aligned_fraction).round() as usize,
            Split::Test => count,
        };
        for i in 0..count {
            let class = i % 3;
            let id = next_id();
            let (centre, stance) = if i < n_aligned {
                aligned.insert(id);
                let signal = add(&class_offset(class, 1, 2, 0.5), &class_offset(class, 3, 4, 2.5));
                (add(&source_topic, &signal), labels[class])
            } else {
                // same cue axes, labels rotated by one class
                let centre = add(&off_topic, &class_offset((class + 1) % 3, 3, 4, 2.0));
                let stance = if rng.gen_bool(sizes.label_noise) {
                    labels[rng.gen_range(0..3)]
                } else {
                    labels[class]
                };
                (centre, stance)
            };
            destination.push(example(id, DESTINATION_TAG, stance, split));
            rows.push((id, gaussian(&mut rng, &centre, 1.0)));
        }
    }

    let noise_topic = axis(&[(6, 3.0)]);
    let mut noise = Vec::new();
    for i in 0..sizes.noise {
        let id = next_id();
        noise.push(example(id, NOISE_TAG, labels[i % 3], Split::Train));
        rows.push((id, gaussian(&mut rng, &noise_topic, 1.0)));
    }

    Ok(TransferBenchmark {
        source: Dataset::new(Scheme::ThreeWay, source)?,
        destination: Dataset::new(Scheme::ThreeWay, destination)?,
        noise: Dataset::new(Scheme::ThreeWay, noise)?,
        store: EmbeddingStore::from_rows(DIM, rows)?,
        aligned,
    })
}

/// Experiment settings used with the transfer benchmark. Model shapes and
/// schedules are the library defaults; learning rates are raised so that 10
/// epochs (20 for fine-tuning) actually move the weights.
pub fn transfer_settings(seeds: Vec<u64>) -> ExperimentSettings {
    ExperimentSettings {
        metric: TrainConfig {
            lr: 1e-3,
            ..TrainConfig::default()
        },
        stance: StanceConfig {
            lr: 1e-2,
            finetune_lr: 2e-2,
            ..StanceConfig::default()
        },
        selection: SelectionSettings::default(),
        seeds,
        ..ExperimentSettings::default()
    }
}

/// Writes the transfer benchmark as CSV corpora plus an embedding store.
/// Returns the written file names, relative to `dir`.
pub fn write_transfer_fixture(bench: &TransferBenchmark, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("source.csv", &bench.source),
        ("destination.csv", &bench.destination),
        ("noise.csv", &bench.noise),
    ];
    let mut written = Vec::new();
    for (name, data) in files {
        data.save_csv(dir.join(name))?;
        written.push(name.to_string());
    }
    save_store(&bench.store, dir.join("embeddings.bin"))?;
    written.push("embeddings.bin".to_string());
    Ok(written)
}
