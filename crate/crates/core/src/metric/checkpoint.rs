//! Metric model checkpoints: a JSON manifest next to a binary tensor blob.
//!
//! The blob uses the embedding store layout with a single record (id 0)
//! holding every parameter, flattened in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::nn::{Linear, Parameters, ProjectionParams};
use super::train::TrainConfig;
use super::MetricModel;
use crate::embed_store::EmbeddingStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "mlsd-metric-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub proj_dim: usize,
    pub seed: u64,
    pub config: TrainConfig,
    /// Epoch whose parameters were kept.
    pub epoch: usize,
    pub val_loss: Option<f64>,
    pub tensors: Vec<TensorEntry>,
    pub blob: String,
    pub blob_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

fn layout(model: &MetricModel) -> Vec<TensorEntry> {
    let p = &model.projection;
    let shapes = [
        ("projection.layer1.weight", vec![p.layer1.out_dim, p.layer1.in_dim]),
        ("projection.layer1.bias", vec![p.layer1.out_dim]),
        ("projection.layer2.weight", vec![p.layer2.out_dim, p.layer2.in_dim]),
        ("projection.layer2.bias", vec![p.layer2.out_dim]),
        ("head.weight", vec![model.head.out_dim, model.head.in_dim]),
        ("head.bias", vec![model.head.out_dim]),
    ];
    let mut offset = 0;
    shapes
        .into_iter()
        .map(|(name, shape)| {
            let e = TensorEntry {
                name: name.to_string(),
                offset,
                shape: shape.clone(),
            };
            offset += shape.iter().product::<usize>();
            e
        })
        .collect()
}

fn flat(model: &MetricModel) -> Vec<f32> {
    let mut v = model.projection.flatten();
    v.extend(model.head.flatten());
    v
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Path of the blob written next to a manifest path.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub epoch: usize,
    pub val_loss: Option<f64>,
    pub config_hash: Option<String>,
}

/// Writes `<manifest>` and its `.bin` blob; returns the manifest.
pub fn save_checkpoint(model: &MetricModel, meta: CheckpointMeta, manifest_path: impl AsRef<Path>) -> Result<CheckpointManifest> {
    let manifest_path = manifest_path.as_ref();
    let params = flat(model);
    let store = EmbeddingStore::new(params.len().max(1), vec![0], pad(params))?;
    let bytes = store.to_bytes();
    let blob = blob_path(manifest_path);
    fs::write(&blob, &bytes).map_err(|e| Error::io(&blob, e))?;
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        input_dim: model.projection.in_dim(),
        hidden_dim: model.projection.hidden_dim(),
        proj_dim: model.projection.out_dim(),
        seed: meta.config.seed,
        config: meta.config,
        epoch: meta.epoch,
        val_loss: meta.val_loss,
        tensors: layout(model),
        blob: blob
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        blob_sha256: sha256_hex(&bytes),
        config_hash: meta.config_hash,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))?;
    Ok(manifest)
}

fn pad(mut v: Vec<f32>) -> Vec<f32> {
    if v.is_empty() {
        v.push(0.0);
    }
    v
}

pub fn load_checkpoint(manifest_path: impl AsRef<Path>) -> Result<(MetricModel, CheckpointManifest)> {
    let manifest_path = manifest_path.as_ref();
    let raw = fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&raw)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::invalid(format!("unsupported checkpoint format {:?}", manifest.format)));
    }
    let blob = manifest_path.with_file_name(&manifest.blob);
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    if sha256_hex(&bytes) != manifest.blob_sha256 {
        return Err(Error::invalid(format!("checkpoint blob {} does not match its manifest hash", blob.display())));
    }
    let store = EmbeddingStore::from_bytes(&bytes)?;
    let values = store.vector(0)?;

    let mut model = MetricModel {
        projection: ProjectionParams::zeros(manifest.input_dim, manifest.hidden_dim, manifest.proj_dim),
        head: Linear::zeros(manifest.proj_dim, 2),
    };
    let expected = layout(&model);
    if expected != manifest.tensors {
        return Err(Error::invalid("checkpoint tensor layout does not match its dimensions"));
    }
    let total: usize = model.projection.num_parameters() + model.head.num_parameters();
    if values.len() != total.max(1) {
        return Err(Error::DimMismatch {
            expected: total,
            got: values.len(),
        });
    }
    let mut at = 0;
    for t in model
        .projection
        .tensors_mut()
        .into_iter()
        .chain(model.head.tensors_mut())
    {
        t.copy_from_slice(&values[at..at + t.len()]);
        at += t.len();
    }
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> MetricModel {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        MetricModel {
            projection: ProjectionParams::xavier(5, 4, 3, &mut rng),
            head: Linear::xavier(3, 2, &mut rng),
        }
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            config: TrainConfig::default(),
            epoch: 3,
            val_loss: Some(0.25),
            config_hash: Some("abc".into()),
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        let m = model();
        let written = save_checkpoint(&m, meta(), &path).unwrap();
        assert_eq!(written.blob, "checkpoint.bin");
        let blob = fs::read(dir.path().join("checkpoint.bin")).unwrap();
        assert_eq!(blob.len(), 20 + 8 + 4 * (5 * 4 + 4 + 4 * 3 + 3 + 3 * 2 + 2));
        let (back, manifest) = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(manifest, written);
    }

    #[test]
    fn tampered_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        save_checkpoint(&model(), meta(), &path).unwrap();
        let blob = dir.path().join("ck.bin");
        let mut bytes = fs::read(&blob).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&blob, bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
