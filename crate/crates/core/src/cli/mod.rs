//! Config-driven workflow: `validate`, `run --stage ...`, `report`, `synth`.

pub mod config;
pub mod run;

use std::path::{Path, PathBuf};

pub use config::{cmd_validate, prepare, Diagnostic, ExperimentConfig};
pub use run::{cmd_run, load_report, RunError, Stage, StageOutcome, StageSelector};

use crate::corpus::Format;
use crate::error::{Error, Result};
use crate::metric::TrainConfig;
use crate::stance::experiment::{ExperimentSettings, SelectionSettings};
use crate::synthetic::{transfer_benchmark, transfer_settings, write_transfer_fixture, TransferSizes, DESTINATION_TAG, NOISE_TAG, SOURCE_TAG};
use config::{DataSpec, EmbeddingsSpec, FileSpec, TargetSpec};

/// Sizes and settings of the small smoke fixture: every stage runs in well
/// under a second.
pub fn smoke_sizes() -> (TransferSizes, ExperimentSettings) {
    let sizes = TransferSizes {
        source: 60,
        destination_train: 60,
        destination_test: 45,
        noise: 60,
        ..TransferSizes::default()
    };
    let mut settings = transfer_settings(vec![13, 42]);
    settings.metric = TrainConfig {
        hidden_dim: 32,
        proj_dim: 16,
        ..settings.metric
    };
    settings.selection = SelectionSettings {
        shots: vec![2, 4],
        ..SelectionSettings::default()
    };
    (sizes, settings)
}

fn role(file: &str, tag: &str) -> TargetSpec {
    TargetSpec {
        files: vec![FileSpec {
            path: PathBuf::from(file),
            format: Format::GenericCsv,
            split: None,
        }],
        targets: vec![tag.to_string()],
        alias: None,
        subsample: None,
    }
}

/// Writes the synthetic transfer benchmark and a matching `config.json` into
/// `dir`; returns the config path.
pub fn write_synthetic_experiment(dir: &Path, sizes: TransferSizes, settings: &ExperimentSettings, data_seed: u64) -> Result<PathBuf> {
    let bench = transfer_benchmark(sizes, data_seed)?;
    write_transfer_fixture(&bench, dir)?;
    let config = ExperimentConfig {
        data: DataSpec {
            source: role("source.csv", SOURCE_TAG),
            destination: role("destination.csv", DESTINATION_TAG),
            noise: role("noise.csv", NOISE_TAG),
        },
        embeddings: EmbeddingsSpec {
            train: PathBuf::from("embeddings.bin"),
            mining: None,
        },
        output_dir: PathBuf::from("out"),
        miner: settings.miner.clone(),
        metric: settings.metric.clone(),
        selection: settings.selection.clone(),
        stance: settings.stance.clone(),
        regimes: settings.regimes.clone(),
        seeds: settings.seeds.clone(),
    };
    let path = dir.join("config.json");
    let mut json = serde_json::to_vec_pretty(&config)?;
    json.push(b'\n');
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
