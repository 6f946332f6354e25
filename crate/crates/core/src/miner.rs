//! Triplet construction with hard negative mining.
//!
//! Every source example anchors `triplets_per_anchor` triplets. Positives are
//! other source examples drawn uniformly; negatives are drawn uniformly from
//! the `k` noise examples most cosine-similar to the anchor.

use std::cmp::Ordering;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::embed_store::{cosine_similarity, EmbeddingStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: u64,
    pub positive: u64,
    pub negative: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinerConfig {
    pub k: usize,
    pub triplets_per_anchor: usize,
    pub seed: u64,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig {
            k: 5,
            triplets_per_anchor: 5,
            seed: 0,
        }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.triplets_per_anchor == 0 {
            return Err(Error::invalid("triplets_per_anchor must be at least 1"));
        }
        Ok(())
    }
}

/// Orders `candidates` by descending cosine similarity to `anchor`, ties by
/// ascending id.
pub fn rank_negatives(anchor: u64, candidates: &[u64], store: &EmbeddingStore) -> Result<Vec<u64>> {
    let a = store.vector(anchor)?;
    let mut scored = candidates
        .iter()
        .map(|&id| Ok((cosine_similarity(a, store.vector(id)?)?, id)))
        .collect::<Result<Vec<(f64, u64)>>>()?;
    scored.sort_by(|x, y| match y.0.total_cmp(&x.0) {
        Ordering::Equal => x.1.cmp(&y.1),
        o => o,
    });
    Ok(scored.into_iter().map(|(_, id)| id).collect())
}

/// Uniform draw from the first `min(k, ranked.len())` entries.
pub fn sample_hard_negative<R: Rng + ?Sized>(ranked: &[u64], k: usize, rng: &mut R) -> Result<u64> {
    if ranked.is_empty() {
        return Err(Error::invalid("no candidate negatives"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let pool = k.min(ranked.len());
    Ok(ranked[rng.gen_range(0..pool)])
}

/// RNG stream for one anchor; independent of the order anchors are visited.
pub fn anchor_rng(seed: u64, anchor: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ anchor)
}

/// Builds `|source| × triplets_per_anchor` triplets, anchors in source order.
///
/// `store` is the mining space; it must hold every source and noise id.
pub fn build_triplets(
    source: &Dataset,
    noise: &Dataset,
    store: &EmbeddingStore,
    cfg: &MinerConfig,
) -> Result<Vec<Triplet>> {
    cfg.validate()?;
    if source.len() < 2 {
        return Err(Error::invalid(format!(
            "source needs at least 2 examples, has {}",
            source.len()
        )));
    }
    if noise.is_empty() {
        return Err(Error::invalid("noise dataset is empty"));
    }
    let source_ids = source.ids();
    let noise_ids = noise.ids();
    for &id in source_ids.iter().chain(&noise_ids) {
        store.vector(id)?;
    }

    let mut out = Vec::with_capacity(source_ids.len() * cfg.triplets_per_anchor);
    for (pos, &anchor) in source_ids.iter().enumerate() {
        let ranked = rank_negatives(anchor, &noise_ids, store)?;
        let mut rng = anchor_rng(cfg.seed, anchor);
        for _ in 0..cfg.triplets_per_anchor {
            // uniform over source \ {anchor}
            let mut j = rng.gen_range(0..source_ids.len() - 1);
            if j >= pos {
                j += 1;
            }
            let negative = sample_hard_negative(&ranked, cfg.k, &mut rng)?;
            out.push(Triplet {
                anchor,
                positive: source_ids[j],
                negative,
            });
        }
    }
    Ok(out)
}

pub fn write_triplets_csv<W: Write>(triplets: &[Triplet], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["anchor_id", "positive_id", "negative_id"])?;
    for t in triplets {
        wtr.write_record([t.anchor.to_string(), t.positive.to_string(), t.negative.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<triplets>", e))?;
    Ok(())
}

pub fn read_triplets_csv<R: Read>(r: R) -> Result<Vec<Triplet>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["anchor_id", "positive_id", "negative_id"] {
        return Err(Error::MalformedRow {
            row: 1,
            reason: "expected header anchor_id,positive_id,negative_id".into(),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| -> Result<u64> {
            rec.get(j)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::MalformedRow {
                    row: i + 2,
                    reason: format!("column {j} is not an id"),
                })
        };
        out.push(Triplet {
            anchor: field(0)?,
            positive: field(1)?,
            negative: field(2)?,
        });
    }
    Ok(out)
}

pub fn save_triplets(triplets: &[Triplet], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_triplets_csv(triplets, std::io::BufWriter::new(f))
}

pub fn load_triplets(path: impl AsRef<Path>) -> Result<Vec<Triplet>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_triplets_csv(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Example, Scheme, Split, StanceLabel};

    fn dataset(ids: &[u64], target: &str) -> Dataset {
        Dataset::new(
            Scheme::ThreeWay,
            ids.iter()
                .map(|&id| Example {
                    id,
                    text: "t".into(),
                    target: target.into(),
                    stance: StanceLabel::Favor,
                    split: Split::Train,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_vector_ranks_first() {
        let store = EmbeddingStore::from_rows(
            2,
            vec![(0, vec![1.0, 1.0]), (1, vec![1.0, 0.0]), (2, vec![2.0, 2.0]), (3, vec![0.0, 1.0])],
        )
        .unwrap();
        assert_eq!(rank_negatives(0, &[1, 3, 2], &store).unwrap()[0], 2);
    }

    #[test]
    fn six_candidates_match_hand_cosines() {
        // anchor (1, 0); candidate angles are 10, 80, 45, 170, 30, 100 degrees.
        let angles = [10.0f64, 80.0, 45.0, 170.0, 30.0, 100.0];
        let mut rows = vec![(100u64, vec![1.0f32, 0.0])];
        for (i, a) in angles.iter().enumerate() {
            let r = (i + 1) as f64;
            let t = a.to_radians();
            rows.push((i as u64, vec![(r * t.cos()) as f32, (r * t.sin()) as f32]));
        }
        let store = EmbeddingStore::from_rows(2, rows).unwrap();
        let ranked = rank_negatives(100, &[0, 1, 2, 3, 4, 5], &store).unwrap();
        // cos: 0.985, 0.174, 0.707, -0.985, 0.866, -0.174
        assert_eq!(ranked, vec![0, 4, 2, 1, 5, 3]);
    }

    #[test]
    fn ties_break_by_id() {
        let store = EmbeddingStore::from_rows(
            2,
            vec![(0, vec![1.0, 0.0]), (9, vec![0.5, 0.5]), (4, vec![0.5, 0.5])],
        )
        .unwrap();
        assert_eq!(rank_negatives(0, &[9, 4], &store).unwrap(), vec![4, 9]);
    }

    #[test]
    fn missing_embedding_is_an_error() {
        let store = EmbeddingStore::from_rows(1, vec![(0, vec![1.0])]).unwrap();
        assert!(matches!(rank_negatives(0, &[5], &store), Err(Error::MissingEmbedding(5))));
    }

    #[test]
    fn hard_negative_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert_eq!(sample_hard_negative(&[7, 8, 9], 1, &mut rng).unwrap(), 7);
        }
        let mut seen = [false; 3];
        for _ in 0..200 {
            let id = sample_hard_negative(&[0, 1, 2], 5, &mut rng).unwrap();
            seen[id as usize] = true;
        }
        assert_eq!(seen, [true; 3]);
        assert!(sample_hard_negative(&[], 5, &mut rng).is_err());
    }

    #[test]
    fn hard_negative_frequencies_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let ranked = [10, 11, 12, 13, 14, 15, 16];
        let mut counts = [0usize; 5];
        let draws = 10_000;
        for _ in 0..draws {
            let id = sample_hard_negative(&ranked, 5, &mut rng).unwrap();
            counts[(id - 10) as usize] += 1;
        }
        let expected = draws as f64 / 5.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9th percentile of chi-square with 4 degrees of freedom
        assert!(chi2 < 18.47, "chi2 = {chi2}");
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.2).abs() < 0.02);
        }
    }

    #[test]
    fn counts_and_determinism() {
        let source = dataset(&[0, 1, 2, 3], "S");
        let noise = dataset(&[10, 11, 12], "N");
        let rows = (0..4u64)
            .map(|i| (i, vec![1.0, i as f32]))
            .chain((10..13u64).map(|i| (i, vec![-1.0, i as f32])))
            .collect::<Vec<_>>();
        let store = EmbeddingStore::from_rows(2, rows).unwrap();
        let cfg = MinerConfig::default();
        let t = build_triplets(&source, &noise, &store, &cfg).unwrap();
        assert_eq!(t.len(), 20);
        for (i, tr) in t.iter().enumerate() {
            assert_eq!(tr.anchor, (i / 5) as u64);
            assert_ne!(tr.anchor, tr.positive);
            assert!(tr.positive < 4);
            assert!((10..13).contains(&tr.negative));
        }
        assert_eq!(t, build_triplets(&source, &noise, &store, &cfg).unwrap());

        assert!(build_triplets(&dataset(&[0], "S"), &noise, &store, &cfg).is_err());
        assert!(build_triplets(&source, &Dataset::empty(Scheme::ThreeWay), &store, &cfg).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = vec![
            Triplet { anchor: 1, positive: 2, negative: 3 },
            Triplet { anchor: 1, positive: 4, negative: 5 },
        ];
        let mut buf = Vec::new();
        write_triplets_csv(&t, &mut buf).unwrap();
        assert!(buf.starts_with(b"anchor_id,positive_id,negative_id\n1,2,3\n"));
        assert_eq!(read_triplets_csv(&buf[..]).unwrap(), t);
    }
}
