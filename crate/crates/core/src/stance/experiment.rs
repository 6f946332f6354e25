//! Runs Standard / Random / MLSD regimes over seeds and aggregates the scores.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::classifier::{finetune, train_stance, LabeledEmbeddings, StanceArch, StanceClassifierParams, StanceConfig};
use super::metrics::{evaluate, Evaluation};
use super::stats::{paired_t_test, TTest};
use crate::corpus::{Dataset, Split, StanceLabel};
use crate::embed_store::EmbeddingStore;
use crate::error::{Error, Result};
use crate::metric::{fit_metric_model, MetricModel, TrainConfig};
use crate::miner::{build_triplets, MinerConfig};
use crate::selector::{select_random, select_top_n, Diversity, SelectionConfig, SelectionResult};

/// Five fixed seeds used when a config names none.
pub const DEFAULT_SEEDS: [u64; 5] = [13, 42, 1234, 2024, 31337];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeKind {
    Standard,
    Random,
    Mlsd,
}

impl RegimeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeKind::Standard => "standard",
            RegimeKind::Random => "random",
            RegimeKind::Mlsd => "mlsd",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Regime {
    Standard,
    RandomFewShot { n: usize, seed: u64 },
    MlsdFewShot { n: usize, seed: u64 },
}

impl Regime {
    pub fn kind(&self) -> RegimeKind {
        match self {
            Regime::Standard => RegimeKind::Standard,
            Regime::RandomFewShot { .. } => RegimeKind::Random,
            Regime::MlsdFewShot { .. } => RegimeKind::Mlsd,
        }
    }

    pub fn n(&self) -> Option<usize> {
        match *self {
            Regime::Standard => None,
            Regime::RandomFewShot { n, .. } | Regime::MlsdFewShot { n, .. } => Some(n),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub regime: Regime,
    pub seed: u64,
    /// Few-shot ids used for fine-tuning, empty for Standard.
    pub shot_ids: Vec<u64>,
    pub evaluation: Evaluation,
}

impl EvalResult {
    pub fn macro_f1(&self) -> f64 {
        self.evaluation.macro_f1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSettings {
    pub shots: Vec<usize>,
    pub diversity: Diversity,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        SelectionSettings {
            shots: vec![5, 10, 15],
            diversity: Diversity::Off,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub miner: MinerConfig,
    pub metric: TrainConfig,
    pub selection: SelectionSettings,
    pub stance: StanceConfig,
    pub regimes: Vec<RegimeKind>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            miner: MinerConfig::default(),
            metric: TrainConfig::default(),
            selection: SelectionSettings::default(),
            stance: StanceConfig::default(),
            regimes: vec![RegimeKind::Standard, RegimeKind::Random, RegimeKind::Mlsd],
            seeds: DEFAULT_SEEDS.to_vec(),
        }
    }
}

impl ExperimentSettings {
    pub fn validate(&self) -> Result<()> {
        self.miner.validate()?;
        self.metric.validate()?;
        self.stance.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::invalid("seeds must be distinct"));
        }
        if self.regimes.is_empty() {
            return Err(Error::invalid("at least one regime is required"));
        }
        let few_shot = self.regimes.iter().any(|r| *r != RegimeKind::Standard);
        if few_shot && (self.selection.shots.is_empty() || self.selection.shots.contains(&0)) {
            return Err(Error::invalid("few-shot regimes need shot counts of at least 1"));
        }
        Ok(())
    }

    /// Copy with miner and metric seeds replaced, for per-seed MLSD runs.
    pub fn reseeded(&self, seed: u64) -> (MinerConfig, TrainConfig) {
        (
            MinerConfig {
                seed,
                ..self.miner.clone()
            },
            TrainConfig {
                seed,
                ..self.metric.clone()
            },
        )
    }
}

/// Datasets and embeddings of one source → destination pair.
pub struct ExperimentInputs<'a> {
    pub source_name: String,
    pub destination_name: String,
    /// Source target; its train split trains the classifier and anchors mining.
    pub source: &'a Dataset,
    /// Destination target with both splits.
    pub destination: &'a Dataset,
    pub noise: &'a Dataset,
    /// Embeddings used for training, selection and evaluation.
    pub store: &'a EmbeddingStore,
    /// Optional separate space for hard-negative mining.
    pub mining_store: Option<&'a EmbeddingStore>,
}

/// Where MLSD shots come from.
pub enum MlsdShots<'a> {
    /// Mine, train and select afresh for every seed, with that seed.
    PerSeed,
    /// Reuse selections computed once (one entry per shot count).
    Precomputed(&'a [SelectionResult]),
}

/// Source-likeness confidence of every destination-train example.
pub fn score_destination(model: &MetricModel, dest_train: &Dataset, store: &EmbeddingStore) -> Result<HashMap<u64, f64>> {
    dest_train
        .iter()
        .filter(|e| e.split == Split::Train)
        .map(|e| Ok((e.id, model.confidence(store.vector(e.id)?)?)))
        .collect()
}

/// One selection per shot count.
pub fn mlsd_selections(
    model: &MetricModel,
    destination: &Dataset,
    store: &EmbeddingStore,
    settings: &SelectionSettings,
    seed: u64,
) -> Result<Vec<SelectionResult>> {
    let dest_train = destination.filter_split(Split::Train);
    let confidences = score_destination(model, &dest_train, store)?;
    let projections = match settings.diversity {
        Diversity::Off => None,
        Diversity::GreedyMaxMin => Some(
            dest_train
                .iter()
                .map(|e| Ok((e.id, model.project(store.vector(e.id)?)?)))
                .collect::<Result<HashMap<u64, Vec<f32>>>>()?,
        ),
    };
    settings
        .shots
        .iter()
        .map(|&n| {
            let cfg = SelectionConfig {
                n,
                diversity: settings.diversity,
                seed,
            };
            select_top_n(&dest_train, &confidences, &cfg, projections.as_ref())
        })
        .collect()
}

/// Mines triplets, fits the metric model and selects shots for one seed.
pub fn mlsd_pipeline(inputs: &ExperimentInputs, settings: &ExperimentSettings, seed: u64) -> Result<(MetricModel, Vec<SelectionResult>)> {
    let (miner, metric) = settings.reseeded(seed);
    let source_train = inputs.source.filter_split(Split::Train);
    let mining = inputs.mining_store.unwrap_or(inputs.store);
    let triplets = build_triplets(&source_train, inputs.noise, mining, &miner)?;
    let fit = fit_metric_model(&triplets, inputs.store, &source_train.ids(), &inputs.noise.ids(), &metric)?;
    let selections = mlsd_selections(&fit.model, inputs.destination, inputs.store, &settings.selection, seed)?;
    Ok((fit.model, selections))
}

fn eval_on(params: &StanceClassifierParams, test: &LabeledEmbeddings) -> Result<Evaluation> {
    let predictions = params.predict_all(&test.xs)?;
    evaluate(&predictions, &test.labels, &test.scheme.classes_of_interest())
}

fn run_seed(
    inputs: &ExperimentInputs,
    settings: &ExperimentSettings,
    mlsd: &MlsdShots,
    seed: u64,
) -> Result<Vec<EvalResult>> {
    let source_train = inputs.source.filter_split(Split::Train);
    let dest_train = inputs.destination.filter_split(Split::Train);
    let dest_test = inputs.destination.filter_split(Split::Test);
    if dest_test.is_empty() {
        return Err(Error::invalid("destination has no test split"));
    }
    let train = LabeledEmbeddings::from_dataset(&source_train, inputs.store)?;
    let test = LabeledEmbeddings::from_dataset(&dest_test, inputs.store)?;
    let base = train_stance(&train, &settings.stance, seed)?;

    let mut out = Vec::new();
    let mut run = |regime: Regime, shot_ids: Vec<u64>| -> Result<()> {
        let params = if shot_ids.is_empty() {
            if regime != Regime::Standard {
                return Err(Error::invalid("no few-shot examples available in the destination train split"));
            }
            base.clone()
        } else {
            let shots = LabeledEmbeddings::from_ids(&dest_train, &shot_ids, inputs.store)?;
            finetune(&base, &shots, &settings.stance, seed)?
        };
        out.push(EvalResult {
            regime,
            seed,
            shot_ids,
            evaluation: eval_on(&params, &test)?,
        });
        Ok(())
    };

    if settings.regimes.contains(&RegimeKind::Standard) {
        run(Regime::Standard, Vec::new())?;
    }
    if settings.regimes.contains(&RegimeKind::Random) {
        for &n in &settings.selection.shots {
            let ids = select_random(&dest_train, n, seed).into_values().flatten().collect();
            run(Regime::RandomFewShot { n, seed }, ids)?;
        }
    }
    if settings.regimes.contains(&RegimeKind::Mlsd) {
        let fresh;
        let selections: &[SelectionResult] = match mlsd {
            MlsdShots::Precomputed(s) => s,
            MlsdShots::PerSeed => {
                fresh = mlsd_pipeline(inputs, settings, seed)?.1;
                &fresh
            }
        };
        for &n in &settings.selection.shots {
            let sel = selections
                .iter()
                .find(|s| s.config.n == n)
                .ok_or_else(|| Error::invalid(format!("no MLSD selection for n = {n}")))?;
            run(Regime::MlsdFewShot { n, seed }, sel.ids())?;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub regime: RegimeKind,
    /// `None` for Standard and for the across-n aggregate.
    pub n: Option<usize>,
    /// Per-seed macro-F1 (averaged over n for the aggregate), in seed order.
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation, 0 for a single seed.
    pub std: f64,
}

fn summarise(regime: RegimeKind, n: Option<usize>, scores: Vec<f64>) -> RegimeSummary {
    let k = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / k;
    let std = if scores.len() < 2 {
        0.0
    } else {
        (scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (k - 1.0)).sqrt()
    };
    RegimeSummary {
        regime,
        n,
        scores,
        mean,
        std,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub source: String,
    pub destination: String,
    pub classifier: String,
    pub classes_of_interest: Vec<StanceLabel>,
    pub seeds: Vec<u64>,
    pub shots: Vec<usize>,
    pub results: Vec<EvalResult>,
    /// Standard plus one row per (few-shot regime, n).
    pub per_n: Vec<RegimeSummary>,
    /// One row per regime, few-shot rows averaged over n.
    pub aggregate: Vec<RegimeSummary>,
    /// MLSD vs Random, paired by seed on the across-n averages.
    pub significance: Option<TTest>,
}

impl ExperimentReport {
    pub fn aggregate_for(&self, regime: RegimeKind) -> Option<&RegimeSummary> {
        self.aggregate.iter().find(|s| s.regime == regime)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Human-readable table: one row for the classifier, one column per
    /// regime, then the per-n breakdown and the significance line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let classes: Vec<&str> = self.classes_of_interest.iter().map(|l| l.as_str()).collect();
        let _ = writeln!(
            s,
            "{} -> {}  (macro-F1 over {}; {} seed{})",
            self.source,
            self.destination,
            classes.join(", "),
            self.seeds.len(),
            if self.seeds.len() == 1 { "" } else { "s" }
        );
        let cell = |r: Option<&RegimeSummary>| match r {
            Some(r) => format!("{:.4} ± {:.4}", r.mean, r.std),
            None => "-".to_string(),
        };
        let _ = writeln!(s, "{:<14}{:<20}{:<20}{:<20}", "classifier", "Standard", "Random", "MLSD");
        let _ = writeln!(
            s,
            "{:<14}{:<20}{:<20}{:<20}",
            self.classifier,
            cell(self.aggregate_for(RegimeKind::Standard)),
            cell(self.aggregate_for(RegimeKind::Random)),
            cell(self.aggregate_for(RegimeKind::Mlsd)),
        );
        let few_shot: Vec<&RegimeSummary> = self.per_n.iter().filter(|r| r.n.is_some()).collect();
        if !few_shot.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "{:<14}{:<20}{:<20}", "n", "Random", "MLSD");
            for &n in &self.shots {
                let find = |k| few_shot.iter().find(|r| r.regime == k && r.n == Some(n)).copied();
                let _ = writeln!(
                    s,
                    "{:<14}{:<20}{:<20}",
                    n,
                    cell(find(RegimeKind::Random)),
                    cell(find(RegimeKind::Mlsd))
                );
            }
        }
        if let Some(t) = &self.significance {
            let _ = writeln!(s);
            let _ = writeln!(
                s,
                "MLSD vs Random: mean diff {:+.4}, t = {:.4}, p = {:.6} (paired, df = {}){}",
                t.mean_diff,
                t.t,
                t.p,
                t.df,
                if t.zero_variance { ", zero variance" } else { "" }
            );
        }
        s
    }
}

fn arch_name(arch: &StanceArch) -> String {
    match arch {
        StanceArch::Linear => "linear".to_string(),
        StanceArch::Mlp { hidden_dim, proj_dim } => format!("mlp-{hidden_dim}-{proj_dim}"),
    }
}

/// Runs every configured regime for every seed. Seeds run in parallel; the
/// report is ordered by seed position and is identical across runs.
pub fn run_experiment(inputs: &ExperimentInputs, settings: &ExperimentSettings, mlsd: MlsdShots) -> Result<ExperimentReport> {
    settings.validate()?;
    if inputs.source.scheme() != inputs.destination.scheme() {
        return Err(Error::SchemeMismatch {
            expected: inputs.source.scheme().to_string(),
            found: inputs.destination.scheme().to_string(),
        });
    }
    let per_seed: Vec<Result<Vec<EvalResult>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = settings
            .seeds
            .iter()
            .map(|&seed| {
                let mlsd = &mlsd;
                scope.spawn(move || run_seed(inputs, settings, mlsd, seed))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::invalid("seed worker panicked"))))
            .collect()
    });
    let per_seed: Vec<Vec<EvalResult>> = per_seed.into_iter().collect::<Result<_>>()?;

    let few_shot_ns = |k: RegimeKind| -> Vec<Option<usize>> {
        if k == RegimeKind::Standard {
            vec![None]
        } else {
            settings.selection.shots.iter().map(|&n| Some(n)).collect()
        }
    };
    let score = |runs: &[EvalResult], k: RegimeKind, n: Option<usize>| -> f64 {
        runs.iter()
            .find(|r| r.regime.kind() == k && r.regime.n() == n)
            .map(EvalResult::macro_f1)
            .expect("every configured regime ran")
    };

    let mut per_n = Vec::new();
    let mut aggregate = Vec::new();
    for &k in [RegimeKind::Standard, RegimeKind::Random, RegimeKind::Mlsd]
        .iter()
        .filter(|k| settings.regimes.contains(k))
    {
        let ns = few_shot_ns(k);
        for &n in &ns {
            per_n.push(summarise(k, n, per_seed.iter().map(|runs| score(runs, k, n)).collect()));
        }
        let averaged = per_seed
            .iter()
            .map(|runs| ns.iter().map(|&n| score(runs, k, n)).sum::<f64>() / ns.len() as f64)
            .collect();
        aggregate.push(summarise(k, None, averaged));
    }

    let find = |k| aggregate.iter().find(|s: &&RegimeSummary| s.regime == k);
    let significance = match (find(RegimeKind::Mlsd), find(RegimeKind::Random)) {
        (Some(m), Some(r)) if settings.seeds.len() >= 2 => Some(paired_t_test(&m.scores, &r.scores)?),
        _ => None,
    };

    Ok(ExperimentReport {
        config_hash: None,
        source: inputs.source_name.clone(),
        destination: inputs.destination_name.clone(),
        classifier: arch_name(&settings.stance.arch),
        classes_of_interest: inputs.destination.scheme().classes_of_interest(),
        seeds: settings.seeds.clone(),
        shots: if settings.regimes.iter().any(|&k| k != RegimeKind::Standard) {
            settings.selection.shots.clone()
        } else {
            Vec::new()
        },
        results: per_seed.into_iter().flatten().collect(),
        per_n,
        aggregate,
        significance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let s = summarise(RegimeKind::Random, Some(5), vec![0.5, 0.7, 0.9]);
        assert!((s.mean - 0.7).abs() < 1e-15);
        assert!((s.std - 0.2).abs() < 1e-15);
        let single = summarise(RegimeKind::Standard, None, vec![0.42]);
        assert_eq!(single.std, 0.0);
        assert_eq!(single.mean, 0.42);
    }

    #[test]
    fn settings_validation() {
        let mut s = ExperimentSettings::default();
        assert!(s.validate().is_ok());
        s.seeds = vec![1, 1];
        assert!(s.validate().is_err());
        s.seeds = vec![];
        assert!(s.validate().is_err());
        s = ExperimentSettings::default();
        s.selection.shots = vec![0];
        assert!(s.validate().is_err());
        s.regimes = vec![RegimeKind::Standard];
        assert!(s.validate().is_ok());
    }

    #[test]
    fn regime_json_layout() {
        let r = Regime::MlsdFewShot { n: 5, seed: 13 };
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"kind":"mlsd-few-shot","n":5,"seed":13}"#);
        assert_eq!(serde_json::to_string(&Regime::Standard).unwrap(), r#"{"kind":"standard"}"#);
    }
}
