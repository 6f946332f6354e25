//! Pipeline stages with content-hash caching.
//!
//! Each stage writes its artifacts plus `<stage>.manifest.json`, which holds
//! the stage key (sha256 over the stage's settings and the hashes of
//! everything it reads) and the sha256 of every file it wrote. A stage whose
//! manifest key and outputs still match is skipped. A stage run on its own
//! refuses upstream artifacts whose manifest no longer matches the config or
//! whose bytes changed since they were written.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{prepare, Diagnostic, Prepared};
use crate::corpus::{Dataset, Split};
use crate::error::Error;
use crate::metric::checkpoint::{blob_path, load_checkpoint, save_checkpoint, sha256_hex, CheckpointMeta};
use crate::metric::fit_metric_model;
use crate::miner::{build_triplets, load_triplets, save_triplets};
use crate::selector::SelectionResult;
use crate::stance::experiment::{mlsd_selections, run_experiment, ExperimentInputs, ExperimentReport, MlsdShots, RegimeKind};

pub const TRIPLETS: &str = "triplets.csv";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const HISTORY: &str = "history.csv";
pub const SELECTION: &str = "selection.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Mine,
    TrainMetric,
    Select,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Mine, Stage::TrainMetric, Stage::Select, Stage::Evaluate];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Mine => "mine",
            Stage::TrainMetric => "train-metric",
            Stage::Select => "select",
            Stage::Evaluate => "evaluate",
        }
    }

    fn manifest_name(self) -> String {
        format!("{}.manifest.json", self.as_str())
    }

    fn outputs(self) -> Vec<&'static str> {
        match self {
            Stage::Mine => vec![TRIPLETS],
            Stage::TrainMetric => vec![CHECKPOINT, "checkpoint.bin", HISTORY],
            Stage::Select => vec![SELECTION],
            Stage::Evaluate => vec![REPORT_JSON, REPORT_TEXT],
        }
    }

    /// Artifact whose absence the stage reports, with its error code.
    fn required_input(self) -> Option<(&'static str, &'static str, Stage)> {
        match self {
            Stage::Mine => None,
            Stage::TrainMetric => Some((TRIPLETS, "MISSING_TRIPLETS", Stage::Mine)),
            Stage::Select => Some((CHECKPOINT, "MISSING_CHECKPOINT", Stage::TrainMetric)),
            Stage::Evaluate => Some((SELECTION, "MISSING_SELECTION", Stage::Select)),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config failed validation")]
    Validation(Vec<Diagnostic>),
    #[error("{code}: {message}")]
    Missing { code: &'static str, message: String },
    #[error("STALE_ARTIFACT: {0}")]
    Stale(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 1,
            RunError::Missing { .. } | RunError::Runtime(_) => 2,
            RunError::Stale(_) => 3,
        }
    }

    pub fn code(&self) -> &str {
        match self {
            RunError::Validation(_) => "VALIDATION",
            RunError::Missing { code, .. } => code,
            RunError::Stale(_) => "STALE_ARTIFACT",
            RunError::Runtime(_) => "RUNTIME",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub cached: bool,
    pub config_hash: String,
}

/// `selection.json`: one selection per shot count, tagged with its stage key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub config_hash: String,
    pub selections: Vec<SelectionResult>,
}

fn file_sha(path: &Path) -> Result<String, Error> {
    fs::read(path).map(|b| sha256_hex(&b)).map_err(|e| Error::io(path, e))
}

fn dataset_sha(d: &Dataset) -> String {
    let bytes = serde_json::to_vec(&(d.scheme(), d.examples())).expect("datasets serialise");
    sha256_hex(&bytes)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn pretty(value: &impl Serialize) -> Result<Vec<u8>, Error> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

struct Runner {
    p: Prepared,
    source_train: Dataset,
}

impl Runner {
    fn out(&self, name: &str) -> PathBuf {
        self.p.output_dir.join(name)
    }

    fn needs_selection(&self) -> bool {
        self.p.config.regimes.contains(&RegimeKind::Mlsd)
    }

    /// Inputs of a stage: name → sha256. Upstream artifacts must exist.
    fn inputs(&self, stage: Stage) -> Result<BTreeMap<String, String>, RunError> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        let settings = |v: serde_json::Value| sha256_hex(v.to_string().as_bytes());
        let cfg = &self.p.config;
        match stage {
            Stage::Mine => {
                put("settings", settings(json!({ "miner": cfg.miner })));
                put("source", dataset_sha(&self.source_train));
                put("noise", dataset_sha(&self.p.noise));
                put(
                    "mining_store",
                    self.p.mining_sha256.clone().unwrap_or_else(|| self.p.store_sha256.clone()),
                );
            }
            Stage::TrainMetric => {
                put("settings", settings(json!({ "metric": cfg.metric })));
                put("source", dataset_sha(&self.source_train));
                put("noise", dataset_sha(&self.p.noise));
                put("store", self.p.store_sha256.clone());
                put(TRIPLETS, self.upstream_sha(stage)?);
            }
            Stage::Select => {
                put("settings", settings(json!({ "selection": cfg.selection, "seed": cfg.metric.seed })));
                put("destination", dataset_sha(&self.p.destination));
                put("store", self.p.store_sha256.clone());
                put(CHECKPOINT, self.upstream_sha(stage)?);
            }
            Stage::Evaluate => {
                put(
                    "settings",
                    settings(json!({
                        "stance": cfg.stance,
                        "regimes": cfg.regimes,
                        "seeds": cfg.seeds,
                        "shots": cfg.selection.shots,
                    })),
                );
                put("source", dataset_sha(&self.p.source));
                put("destination", dataset_sha(&self.p.destination));
                put("store", self.p.store_sha256.clone());
                if self.needs_selection() {
                    put(SELECTION, self.upstream_sha(stage)?);
                }
            }
        }
        Ok(m)
    }

    fn upstream_sha(&self, stage: Stage) -> Result<String, RunError> {
        let (file, code, _) = stage.required_input().expect("stage has an upstream");
        let path = self.out(file);
        if !path.is_file() {
            return Err(RunError::Missing {
                code,
                message: format!("{} not found; run the earlier stages first", path.display()),
            });
        }
        Ok(file_sha(&path)?)
    }

    fn key(inputs: &BTreeMap<String, String>, stage: Stage) -> String {
        sha256_hex(json!({ "stage": stage.as_str(), "inputs": inputs }).to_string().as_bytes())
    }

    fn read_manifest(&self, stage: Stage) -> Option<StageManifest> {
        let raw = fs::read(self.out(&stage.manifest_name())).ok()?;
        serde_json::from_slice(&raw).ok()
    }

    /// True when the manifest matches `key` and every output is intact.
    fn is_current(&self, stage: Stage, key: &str) -> bool {
        let Some(m) = self.read_manifest(stage) else {
            return false;
        };
        m.config_hash == key
            && stage.outputs().iter().all(|o| {
                m.outputs.get(*o).is_some_and(|h| file_sha(&self.out(o)).is_ok_and(|cur| &cur == h))
            })
    }

    /// Upstream artifacts must come from the current config, unmodified.
    fn check_upstream(&self, stage: Stage) -> Result<(), RunError> {
        let Some((_, _, up)) = stage.required_input() else {
            return Ok(());
        };
        if stage == Stage::Evaluate && !self.needs_selection() {
            return Ok(());
        }
        self.upstream_sha(stage)?;
        self.check_upstream(up)?;
        let key = Self::key(&self.inputs(up)?, up);
        if !self.is_current(up, &key) {
            return Err(RunError::Stale(format!(
                "{} outputs do not match the current config or were modified; rerun `{}`",
                up, up
            )));
        }
        Ok(())
    }

    fn run_stage(&self, stage: Stage) -> Result<StageOutcome, RunError> {
        self.check_upstream(stage)?;
        let inputs = self.inputs(stage)?;
        let key = Self::key(&inputs, stage);
        if self.is_current(stage, &key) {
            return Ok(StageOutcome {
                stage,
                cached: true,
                config_hash: key,
            });
        }
        fs::create_dir_all(&self.p.output_dir).map_err(|e| Error::io(&self.p.output_dir, e))?;
        match stage {
            Stage::Mine => self.mine()?,
            Stage::TrainMetric => self.train_metric(&key)?,
            Stage::Select => self.select(&key)?,
            Stage::Evaluate => self.evaluate(&key)?,
        }
        let mut outputs = BTreeMap::new();
        for o in stage.outputs() {
            outputs.insert(o.to_string(), file_sha(&self.out(o))?);
        }
        let manifest = StageManifest {
            stage: stage.as_str().to_string(),
            config_hash: key.clone(),
            inputs,
            outputs,
        };
        write_file(&self.out(&stage.manifest_name()), &pretty(&manifest)?)?;
        Ok(StageOutcome {
            stage,
            cached: false,
            config_hash: key,
        })
    }

    fn mine(&self) -> Result<(), Error> {
        let store = self.p.mining_store.as_ref().unwrap_or(&self.p.store);
        let triplets = build_triplets(&self.source_train, &self.p.noise, store, &self.p.config.miner)?;
        save_triplets(&triplets, self.out(TRIPLETS))
    }

    fn train_metric(&self, key: &str) -> Result<(), Error> {
        let triplets = load_triplets(self.out(TRIPLETS))?;
        let cfg = &self.p.config.metric;
        let fit = fit_metric_model(&triplets, &self.p.store, &self.source_train.ids(), &self.p.noise.ids(), cfg)?;
        let h = &fit.triplet_history;
        let meta = CheckpointMeta {
            config: cfg.clone(),
            epoch: h.best_epoch,
            val_loss: h.best_val_loss(),
            config_hash: Some(key.to_string()),
        };
        save_checkpoint(&fit.model, meta, self.out(CHECKPOINT))?;
        debug_assert!(blob_path(&self.out(CHECKPOINT)).is_file());
        let mut csv = Vec::new();
        h.write_csv(&mut csv)?;
        write_file(&self.out(HISTORY), &csv)
    }

    fn select(&self, key: &str) -> Result<(), Error> {
        let (model, _) = load_checkpoint(self.out(CHECKPOINT))?;
        let selections = mlsd_selections(
            &model,
            &self.p.destination,
            &self.p.store,
            &self.p.config.selection,
            self.p.config.metric.seed,
        )?
        .into_iter()
        .map(|s| s.with_checkpoint(CHECKPOINT))
        .collect();
        let file = SelectionFile {
            config_hash: key.to_string(),
            selections,
        };
        write_file(&self.out(SELECTION), &pretty(&file)?)
    }

    fn evaluate(&self, key: &str) -> Result<(), Error> {
        let selections = if self.needs_selection() {
            let raw = fs::read(self.out(SELECTION)).map_err(|e| Error::io(self.out(SELECTION), e))?;
            serde_json::from_slice::<SelectionFile>(&raw)?.selections
        } else {
            Vec::new()
        };
        let cfg = &self.p.config;
        let inputs = ExperimentInputs {
            source_name: cfg.data.source.display_name(),
            destination_name: cfg.data.destination.display_name(),
            source: &self.p.source,
            destination: &self.p.destination,
            noise: &self.p.noise,
            store: &self.p.store,
            mining_store: self.p.mining_store.as_ref(),
        };
        let mut report = run_experiment(&inputs, &cfg.settings(), MlsdShots::Precomputed(&selections))?;
        report.config_hash = Some(key.to_string());
        write_file(&self.out(REPORT_JSON), report.to_json()?.as_bytes())?;
        write_file(&self.out(REPORT_TEXT), report.to_text().as_bytes())
    }
}

/// Which stages to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageSelector {
    One(Stage),
    All,
}

impl std::str::FromStr for StageSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        if s == "all" {
            return Ok(StageSelector::All);
        }
        Stage::ALL
            .iter()
            .find(|st| st.as_str() == s)
            .map(|&st| StageSelector::One(st))
            .ok_or_else(|| Error::invalid(format!("unknown stage {s:?}")))
    }
}

/// Validates the config, then runs the requested stage(s) in pipeline order.
pub fn cmd_run(config_path: &Path, stages: StageSelector, output_root: Option<&Path>) -> Result<Vec<StageOutcome>, RunError> {
    let p = prepare(config_path, output_root).map_err(RunError::Validation)?;
    let source_train = p.source.filter_split(Split::Train);
    let runner = Runner { p, source_train };
    match stages {
        StageSelector::One(s) => Ok(vec![runner.run_stage(s)?]),
        StageSelector::All => Stage::ALL.iter().map(|&s| runner.run_stage(s)).collect(),
    }
}

/// Loads `report.json` from the config's output directory.
pub fn load_report(config_path: &Path, output_root: Option<&Path>) -> Result<ExperimentReport, RunError> {
    let raw = fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
    let config: super::config::ExperimentConfig = serde_json::from_str(&raw).map_err(Error::from)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let dir = super::config::resolve_output_dir(&config, base, output_root);
    let path = dir.join(REPORT_JSON);
    if !path.is_file() {
        return Err(RunError::Missing {
            code: "MISSING_REPORT",
            message: format!("{} not found; run the evaluate stage first", path.display()),
        });
    }
    let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&raw).map_err(Error::from)?)
}
