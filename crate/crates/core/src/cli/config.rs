//! Experiment config file and its validation.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{load_dataset_with_split, Dataset, Example, Format, Split};
use crate::embed_store::EmbeddingStore;
use crate::metric::TrainConfig;
use crate::miner::MinerConfig;
use crate::stance::experiment::{ExperimentSettings, RegimeKind, SelectionSettings, DEFAULT_SEEDS};
use crate::stance::StanceConfig;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSpec {
    pub path: PathBuf,
    pub format: Format,
    /// Split for rows that carry none; defaults to train.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subsample {
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
}

/// One role (source, destination or noise): the files to read, the target
/// tags to keep, and an optional tag that merges them (e.g. `POL`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub files: Vec<FileSpec>,
    #[serde(default)]
    pub targets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<Subsample>,
}

impl TargetSpec {
    /// Name used in reports.
    pub fn display_name(&self) -> String {
        match (&self.alias, self.targets.is_empty()) {
            (Some(a), _) => a.clone(),
            (None, false) => self.targets.join("+"),
            (None, true) => "all".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub source: TargetSpec,
    pub destination: TargetSpec,
    pub noise: TargetSpec,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingsSpec {
    /// Store used for training, selection and evaluation.
    pub train: PathBuf,
    /// Optional store used only for hard-negative mining.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mining: Option<PathBuf>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("mlsd-out")
}

fn default_regimes() -> Vec<RegimeKind> {
    ExperimentSettings::default().regimes
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSpec,
    pub embeddings: EmbeddingsSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub miner: MinerConfig,
    #[serde(default)]
    pub metric: TrainConfig,
    #[serde(default)]
    pub selection: SelectionSettings,
    #[serde(default)]
    pub stance: StanceConfig,
    #[serde(default = "default_regimes")]
    pub regimes: Vec<RegimeKind>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn settings(&self) -> ExperimentSettings {
        ExperimentSettings {
            miner: self.miner.clone(),
            metric: self.metric.clone(),
            selection: self.selection.clone(),
            stance: self.stance.clone(),
            regimes: self.regimes.clone(),
            seeds: self.seeds.clone(),
        }
    }
}

/// A validation finding with a stable machine-readable code.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

/// Everything a run needs, loaded and checked.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub config_path: PathBuf,
    pub output_dir: PathBuf,
    pub source: Dataset,
    pub destination: Dataset,
    pub noise: Dataset,
    pub store: EmbeddingStore,
    pub mining_store: Option<EmbeddingStore>,
    /// sha256 of the store files as read.
    pub store_sha256: String,
    pub mining_sha256: Option<String>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Output directory: absolute paths win, then `output_root`, then the
/// directory holding the config file.
pub fn resolve_output_dir(config: &ExperimentConfig, config_dir: &Path, output_root: Option<&Path>) -> PathBuf {
    if config.output_dir.is_absolute() {
        return config.output_dir.clone();
    }
    match output_root {
        Some(root) => root.join(&config.output_dir),
        None => config_dir.join(&config.output_dir),
    }
}

fn load_role(spec: &TargetSpec, base: &Path, role: &str, diags: &mut Vec<Diagnostic>) -> Option<Dataset> {
    let mut parts = Vec::new();
    for f in &spec.files {
        let path = resolve(base, &f.path);
        match load_dataset_with_split(&path, f.format, f.split.unwrap_or(Split::Train)) {
            Ok(d) => parts.push(d),
            Err(e) => {
                diags.push(Diagnostic::new("DATA_ERROR", format!("{role}: {}: {e}", path.display())));
                return None;
            }
        }
    }
    let all = match Dataset::concat(&parts, None) {
        Ok(d) => d,
        Err(e) => {
            diags.push(Diagnostic::new("DATA_ERROR", format!("{role}: {e}")));
            return None;
        }
    };
    let selected = if spec.targets.is_empty() {
        vec![all]
    } else {
        let mut out = Vec::new();
        for t in &spec.targets {
            let d = all.filter_target(t);
            if d.is_empty() {
                diags.push(Diagnostic::new(
                    "TARGET_NOT_FOUND",
                    format!("{role}: no examples with target {t:?}"),
                ));
                return None;
            }
            out.push(d);
        }
        out
    };
    let merged = match Dataset::concat(&selected, spec.alias.as_deref()) {
        Ok(d) => d,
        Err(e) => {
            diags.push(Diagnostic::new("DATA_ERROR", format!("{role}: {e}")));
            return None;
        }
    };
    match &spec.subsample {
        None => Some(merged),
        Some(s) => match merged.subsample_balanced(s.size, s.seed) {
            Ok(d) => Some(d),
            Err(e) => {
                diags.push(Diagnostic::new("INVALID_SETTING", format!("{role}: {e}")));
                None
            }
        },
    }
}

fn load_store_checked(path: &Path, diags: &mut Vec<Diagnostic>) -> Option<(EmbeddingStore, String)> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            diags.push(Diagnostic::new("EMBEDDINGS_ERROR", format!("{}: {e}", path.display())));
            return None;
        }
    };
    match EmbeddingStore::from_bytes(&bytes) {
        Ok(s) => Some((s, crate::metric::checkpoint::sha256_hex(&bytes))),
        Err(e) => {
            diags.push(Diagnostic::new("EMBEDDINGS_ERROR", format!("{}: {e}", path.display())));
            None
        }
    }
}

fn check_coverage(store: &EmbeddingStore, name: &str, sets: &[(&str, &Dataset)], diags: &mut Vec<Diagnostic>) {
    for (role, d) in sets {
        let missing: Vec<u64> = d.iter().map(|e| e.id).filter(|id| !store.contains(*id)).collect();
        if let Some(first) = missing.first() {
            diags.push(Diagnostic::new(
                "MISSING_EMBEDDING",
                format!("{name} store lacks {} {role} id(s), first {first}", missing.len()),
            ));
        }
    }
}

fn tag_set(spec: &TargetSpec) -> BTreeSet<String> {
    let mut s: BTreeSet<String> = spec.targets.iter().cloned().collect();
    if let Some(a) = &spec.alias {
        s.insert(a.clone());
    }
    s
}

/// Parses and checks a config; on success every dataset and store is loaded.
pub fn prepare(config_path: &Path, output_root: Option<&Path>) -> std::result::Result<Prepared, Vec<Diagnostic>> {
    let raw = fs::read_to_string(config_path).map_err(|e| {
        vec![Diagnostic::new(
            "CONFIG_UNREADABLE",
            format!("{}: {e}", config_path.display()),
        )]
    })?;
    let config: ExperimentConfig =
        serde_json::from_str(&raw).map_err(|e| vec![Diagnostic::new("CONFIG_INVALID", e.to_string())])?;
    let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut diags = Vec::new();

    if let Err(e) = config.settings().validate() {
        diags.push(Diagnostic::new("INVALID_SETTING", e.to_string()));
    }

    let roles = [
        ("source", &config.data.source),
        ("destination", &config.data.destination),
        ("noise", &config.data.noise),
    ];
    for (role, spec) in roles {
        if spec.files.is_empty() {
            diags.push(Diagnostic::new("NO_FILES", format!("{role} lists no files")));
        }
        for f in &spec.files {
            let p = resolve(&base, &f.path);
            if !p.is_file() {
                diags.push(Diagnostic::new("PATH_NOT_FOUND", format!("{role}: {}", p.display())));
            }
        }
    }
    let stores: Vec<PathBuf> = std::iter::once(&config.embeddings.train)
        .chain(config.embeddings.mining.as_ref())
        .map(|p| resolve(&base, p))
        .collect();
    for p in &stores {
        if !p.is_file() {
            diags.push(Diagnostic::new("PATH_NOT_FOUND", format!("embeddings: {}", p.display())));
        }
    }

    let (src_tags, dst_tags, noise_tags) = (
        tag_set(&config.data.source),
        tag_set(&config.data.destination),
        tag_set(&config.data.noise),
    );
    let same_files = |a: &TargetSpec, b: &TargetSpec| a.files == b.files;
    let clash = |a: &BTreeSet<String>, b: &BTreeSet<String>, sa: &TargetSpec, sb: &TargetSpec| {
        !a.is_disjoint(b) || (a.is_empty() && b.is_empty() && same_files(sa, sb))
    };
    if clash(&noise_tags, &src_tags, &config.data.noise, &config.data.source) {
        diags.push(Diagnostic::new("NOISE_EQ_SOURCE", "noise target overlaps the source target"));
    }
    if clash(&noise_tags, &dst_tags, &config.data.noise, &config.data.destination) {
        diags.push(Diagnostic::new(
            "NOISE_EQ_DESTINATION",
            "noise target overlaps the destination target",
        ));
    }
    if !diags.is_empty() {
        return Err(diags);
    }

    let source = load_role(&config.data.source, &base, "source", &mut diags);
    let destination = load_role(&config.data.destination, &base, "destination", &mut diags);
    let noise = load_role(&config.data.noise, &base, "noise", &mut diags);
    let train = load_store_checked(&stores[0], &mut diags);
    let mining = stores.get(1).and_then(|p| load_store_checked(p, &mut diags));
    let (Some(source), Some(destination), Some(noise), Some((store, store_sha256))) = (source, destination, noise, train) else {
        return Err(diags);
    };

    if source.scheme() != destination.scheme() {
        diags.push(Diagnostic::new(
            "SCHEME_MISMATCH",
            format!(
                "source uses the {} scheme but destination uses {}",
                source.scheme(),
                destination.scheme()
            ),
        ));
    }
    if source.filter_split(Split::Train).len() < 2 {
        diags.push(Diagnostic::new("NO_TRAIN_SPLIT", "source needs at least 2 train examples"));
    }
    if destination.filter_split(Split::Test).is_empty() {
        diags.push(Diagnostic::new("NO_TEST_SPLIT", "destination has no test examples"));
    }
    if config.regimes.iter().any(|&r| r != RegimeKind::Standard) && destination.filter_split(Split::Train).is_empty() {
        diags.push(Diagnostic::new(
            "NO_TRAIN_SPLIT",
            "few-shot regimes need destination train examples",
        ));
    }
    // The same example may serve two roles (a self-transfer control); two
    // different examples may not share an id, since the store joins by id.
    let mut owner: HashMap<u64, (&str, &Example)> = HashMap::new();
    'roles: for (role, d) in [("source", &source), ("destination", &destination), ("noise", &noise)] {
        for e in d.iter() {
            if let Some((prev, other)) = owner.insert(e.id, (role, e)) {
                if other != e {
                    diags.push(Diagnostic::new(
                        "ID_COLLISION",
                        format!("id {} names different examples in {prev} and {role}", e.id),
                    ));
                    break 'roles;
                }
            }
        }
    }
    let everything = [("source", &source), ("destination", &destination), ("noise", &noise)];
    check_coverage(&store, "train", &everything, &mut diags);
    if let Some((m, _)) = &mining {
        check_coverage(m, "mining", &everything[..1].iter().chain(&everything[2..]).copied().collect::<Vec<_>>(), &mut diags);
    }
    if !diags.is_empty() {
        return Err(diags);
    }

    let output_dir = resolve_output_dir(&config, &base, output_root);
    let (mining_store, mining_sha256) = match mining {
        Some((s, h)) => (Some(s), Some(h)),
        None => (None, None),
    };
    Ok(Prepared {
        config,
        config_path: config_path.to_path_buf(),
        output_dir,
        source,
        destination,
        noise,
        store,
        mining_store,
        store_sha256,
        mining_sha256,
    })
}

/// Diagnostics for a config file; empty means clean.
pub fn cmd_validate(config_path: &Path) -> Vec<Diagnostic> {
    match prepare(config_path, None) {
        Ok(_) => Vec::new(),
        Err(d) => d,
    }
}
