//! Few-shot selection: the `n` destination-train examples of each stance class
//! that the metric model scores as most source-like.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Split, StanceLabel};
use crate::embed_store::euclidean_distance;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Diversity {
    #[default]
    Off,
    /// Greedy max-min projected distance inside the top-3n confidence pool.
    GreedyMaxMin,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub n: usize,
    #[serde(default)]
    pub diversity: Diversity,
    #[serde(default)]
    pub seed: u64,
}

impl SelectionConfig {
    pub fn new(n: usize) -> Self {
        SelectionConfig {
            n,
            diversity: Diversity::Off,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selected {
    pub id: u64,
    pub confidence: f64,
}

/// Per-class selections, each sorted by descending confidence.
///
/// Serialises as `{"FAVOR": [{id, confidence}, ...], ..., "config": ...,
/// "checkpoint": ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    #[serde(flatten)]
    pub classes: BTreeMap<StanceLabel, Vec<Selected>>,
    pub config: SelectionConfig,
    pub checkpoint: String,
}

impl SelectionResult {
    pub fn with_checkpoint(mut self, checkpoint: impl Into<String>) -> Self {
        self.checkpoint = checkpoint.into();
        self
    }

    /// Selected ids, class by class in scheme order.
    pub fn ids(&self) -> Vec<u64> {
        self.classes.values().flatten().map(|s| s.id).collect()
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Descending confidence, then ascending id.
fn by_confidence(a: &Selected, b: &Selected) -> Ordering {
    match b.confidence.total_cmp(&a.confidence) {
        Ordering::Equal => a.id.cmp(&b.id),
        o => o,
    }
}

fn pick_diverse(pool: &[Selected], n: usize, projections: &HashMap<u64, Vec<f32>>) -> Result<Vec<Selected>> {
    let vecs = pool
        .iter()
        .map(|s| {
            projections
                .get(&s.id)
                .map(Vec::as_slice)
                .ok_or(Error::MissingEmbedding(s.id))
        })
        .collect::<Result<Vec<&[f32]>>>()?;
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    let mut min_dist = vec![f64::INFINITY; pool.len()];
    let mut taken = vec![false; pool.len()];
    while chosen.len() < n.min(pool.len()) {
        // pool is sorted, so the first maximum is also the most confident one
        let mut best: Option<usize> = None;
        for i in 0..pool.len() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| min_dist[i] > min_dist[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("pool not exhausted");
        taken[b] = true;
        chosen.push(b);
        for i in 0..pool.len() {
            if !taken[i] {
                min_dist[i] = min_dist[i].min(euclidean_distance(vecs[i], vecs[b])?);
            }
        }
    }
    let mut out: Vec<Selected> = chosen.into_iter().map(|i| pool[i]).collect();
    out.sort_by(by_confidence);
    Ok(out)
}

/// Top-`n` destination-train examples per stance class by confidence, ties
/// broken by ascending id. Test-split examples are never selected.
///
/// `projections` is only consulted when diversity is enabled.
pub fn select_top_n(
    dest_train: &Dataset,
    confidences: &HashMap<u64, f64>,
    cfg: &SelectionConfig,
    projections: Option<&HashMap<u64, Vec<f32>>>,
) -> Result<SelectionResult> {
    if cfg.n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if dest_train.is_empty() {
        return Err(Error::invalid("destination dataset is empty"));
    }
    let mut by_class: BTreeMap<StanceLabel, Vec<Selected>> =
        dest_train.scheme().labels().iter().map(|&l| (l, Vec::new())).collect();
    for ex in dest_train.iter().filter(|e| e.split == Split::Train) {
        let confidence = *confidences
            .get(&ex.id)
            .ok_or_else(|| Error::invalid(format!("missing confidence for id {}", ex.id)))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(format!(
                "confidence {confidence} for id {} is outside [0, 1]",
                ex.id
            )));
        }
        by_class.get_mut(&ex.stance).unwrap().push(Selected {
            id: ex.id,
            confidence,
        });
    }

    for members in by_class.values_mut() {
        members.sort_by(by_confidence);
        match cfg.diversity {
            Diversity::Off => members.truncate(cfg.n),
            Diversity::GreedyMaxMin => {
                let projections = projections
                    .ok_or_else(|| Error::invalid("diversity selection needs projected vectors"))?;
                members.truncate(3 * cfg.n);
                *members = pick_diverse(members, cfg.n, projections)?;
            }
        }
    }
    Ok(SelectionResult {
        classes: by_class,
        config: cfg.clone(),
        checkpoint: String::new(),
    })
}

/// `min(n, |class|)` destination-train ids per class drawn uniformly.
pub fn select_random(dest_train: &Dataset, n: usize, seed: u64) -> BTreeMap<StanceLabel, Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dest_train
        .scheme()
        .labels()
        .iter()
        .map(|&label| {
            let mut ids: Vec<u64> = dest_train
                .iter()
                .filter(|e| e.split == Split::Train && e.stance == label)
                .map(|e| e.id)
                .collect();
            ids.shuffle(&mut rng);
            ids.truncate(n);
            (label, ids)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Example, Scheme};
    use proptest::prelude::*;

    fn fixture(labels: &[(u64, StanceLabel, Split)]) -> Dataset {
        Dataset::new(
            Scheme::ThreeWay,
            labels
                .iter()
                .map(|&(id, stance, split)| Example {
                    id,
                    text: "x".into(),
                    target: "D".into(),
                    stance,
                    split,
                })
                .collect(),
        )
        .unwrap()
    }

    use StanceLabel::*;

    #[test]
    fn small_class_is_exhausted() {
        let d = fixture(&[(0, Favor, Split::Train), (1, Favor, Split::Train), (2, Favor, Split::Train)]);
        let conf = (0..3).map(|i| (i, 0.1 * i as f64)).collect();
        let r = select_top_n(&d, &conf, &SelectionConfig::new(5), None).unwrap();
        assert_eq!(r.classes[&Favor].len(), 3);
        assert!(r.classes[&Against].is_empty());
        assert_eq!(r.ids(), vec![2, 1, 0]);
    }

    #[test]
    fn hand_assigned_ten_examples() {
        let rows = [
            (0, Favor, 0.9),
            (1, Favor, 0.2),
            (2, Against, 0.5),
            (3, Favor, 0.95),
            (4, Against, 0.7),
            (5, Neither, 0.1),
            (6, Against, 0.3),
            (7, Favor, 0.6),
            (8, Neither, 0.8),
            (9, Against, 0.99),
        ];
        let d = fixture(&rows.iter().map(|&(i, l, _)| (i, l, Split::Train)).collect::<Vec<_>>());
        let conf = rows.iter().map(|&(i, _, c)| (i, c)).collect();
        let r = select_top_n(&d, &conf, &SelectionConfig::new(2), None).unwrap();
        let ids = |l| r.classes[&l].iter().map(|s: &Selected| s.id).collect::<Vec<_>>();
        assert_eq!(ids(Favor), vec![3, 0]);
        assert_eq!(ids(Against), vec![9, 4]);
        assert_eq!(ids(Neither), vec![8, 5]);
    }

    #[test]
    fn boundary_tie_prefers_lower_id() {
        let d = fixture(&[(7, Favor, Split::Train), (3, Favor, Split::Train), (5, Favor, Split::Train)]);
        let conf = [(7, 0.5), (3, 0.5), (5, 0.9)].into_iter().collect();
        let r = select_top_n(&d, &conf, &SelectionConfig::new(2), None).unwrap();
        assert_eq!(r.ids(), vec![5, 3]);
    }

    #[test]
    fn errors() {
        let d = fixture(&[(0, Favor, Split::Train), (1, Against, Split::Train)]);
        let conf: HashMap<u64, f64> = [(0, 0.5)].into_iter().collect();
        assert!(select_top_n(&d, &conf, &SelectionConfig::new(1), None).is_err());
        let empty = Dataset::empty(Scheme::ThreeWay);
        assert!(select_top_n(&empty, &conf, &SelectionConfig::new(1), None).is_err());
        let bad: HashMap<u64, f64> = [(0, 1.5), (1, 0.2)].into_iter().collect();
        assert!(select_top_n(&d, &bad, &SelectionConfig::new(1), None).is_err());
    }

    #[test]
    fn test_split_is_never_selected() {
        let d = fixture(&[(0, Favor, Split::Test), (1, Favor, Split::Train)]);
        let conf = [(0, 1.0), (1, 0.1)].into_iter().collect();
        let r = select_top_n(&d, &conf, &SelectionConfig::new(2), None).unwrap();
        assert_eq!(r.ids(), vec![1]);
        assert_eq!(select_random(&d, 2, 0)[&Favor], vec![1]);
    }

    #[test]
    fn greedy_max_min_spreads_picks() {
        // Three near-duplicates with top confidence and one far point.
        let d = fixture(&[
            (0, Favor, Split::Train),
            (1, Favor, Split::Train),
            (2, Favor, Split::Train),
            (3, Favor, Split::Train),
        ]);
        let conf = [(0, 0.9), (1, 0.89), (2, 0.88), (3, 0.5)].into_iter().collect();
        let proj: HashMap<u64, Vec<f32>> = [
            (0, vec![0.0, 0.0]),
            (1, vec![0.01, 0.0]),
            (2, vec![0.0, 0.01]),
            (3, vec![5.0, 5.0]),
        ]
        .into_iter()
        .collect();
        let cfg = SelectionConfig {
            n: 2,
            diversity: Diversity::GreedyMaxMin,
            seed: 0,
        };
        let r = select_top_n(&d, &conf, &cfg, Some(&proj)).unwrap();
        assert_eq!(r.ids(), vec![0, 3]);
        assert!(select_top_n(&d, &conf, &cfg, None).is_err());
        let off = select_top_n(&d, &conf, &SelectionConfig::new(2), None).unwrap();
        assert_eq!(off.ids(), vec![0, 1]);
    }

    #[test]
    fn json_layout() {
        let d = fixture(&[(4, Against, Split::Train)]);
        let conf = [(4, 0.25)].into_iter().collect();
        let r = select_top_n(&d, &conf, &SelectionConfig::new(1), None)
            .unwrap()
            .with_checkpoint("ck");
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["AGAINST"][0]["id"], 4);
        assert_eq!(v["AGAINST"][0]["confidence"], 0.25);
        assert_eq!(v["FAVOR"], serde_json::json!([]));
        assert_eq!(v["checkpoint"], "ck");
        assert_eq!(v["config"]["n"], 1);
        let back: SelectionResult = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn matches_exhaustive_sort_and_is_monotone(
            rows in prop::collection::vec((0usize..3, 0u8..20), 1..40),
            n in 1usize..8,
        ) {
            let labels = Scheme::ThreeWay.labels();
            let d = fixture(&rows.iter().enumerate().map(|(i, &(c, _))| (i as u64, labels[c], Split::Train)).collect::<Vec<_>>());
            // coarse confidences to force ties
            let conf: HashMap<u64, f64> = rows.iter().enumerate().map(|(i, &(_, q))| (i as u64, q as f64 / 19.0)).collect();
            let r = select_top_n(&d, &conf, &SelectionConfig::new(n), None).unwrap();
            for &label in labels {
                let mut all: Vec<(f64, u64)> = d.iter().filter(|e| e.stance == label).map(|e| (conf[&e.id], e.id)).collect();
                all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                let expect: Vec<u64> = all.iter().take(n).map(|x| x.1).collect();
                let got: Vec<u64> = r.classes[&label].iter().map(|s| s.id).collect();
                prop_assert_eq!(got, expect);
            }
            let bigger = select_top_n(&d, &conf, &SelectionConfig::new(n + 3), None).unwrap();
            let big_ids = bigger.ids();
            prop_assert!(r.ids().iter().all(|id| big_ids.contains(id)));
        }
    }
}
