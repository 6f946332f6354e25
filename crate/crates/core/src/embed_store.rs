//! Fixed-dimension embedding vectors keyed by example id, and the binary file
//! format they live in.
//!
//! Layout (little-endian): the 8-byte magic `MLSDEMB1`, a `u32` dimension, a
//! `u64` record count, then per record a `u64` example id followed by `dim`
//! `f32` components.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MLSDEMB1";
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<u64>,
    data: Vec<f32>,
    index: HashMap<u64, usize>,
}

impl EmbeddingStore {
    /// Builds a store from row-major `data` of shape `ids.len() × dim`.
    pub fn new(dim: usize, ids: Vec<u64>, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if dim > u32::MAX as usize {
            return Err(Error::invalid("embedding dimension does not fit in u32"));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::DimMismatch {
                expected: ids.len() * dim,
                got: data.len(),
            });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, &id) in ids.iter().enumerate() {
            if index.insert(id, row).is_some() {
                return Err(Error::DuplicateId(id));
            }
            if data[row * dim..(row + 1) * dim].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(id));
            }
        }
        Ok(EmbeddingStore {
            dim,
            ids,
            data,
            index,
        })
    }

    pub fn from_rows(dim: usize, rows: impl IntoIterator<Item = (u64, Vec<f32>)>) -> Result<Self> {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (id, v) in rows {
            if v.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            ids.push(id);
            data.extend_from_slice(&v);
        }
        Self::new(dim, ids, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn contains(&self, id: u64) -> bool {
        self.index.contains_key(&id)
    }

    pub fn get(&self, id: u64) -> Option<&[f32]> {
        self.index
            .get(&id)
            .map(|&row| &self.data[row * self.dim..(row + 1) * self.dim])
    }

    /// Like [`EmbeddingStore::get`], but a missing id is an error.
    pub fn vector(&self, id: u64) -> Result<&[f32]> {
        self.get(id).ok_or(Error::MissingEmbedding(id))
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[f32])> + '_ {
        self.ids.iter().enumerate().map(|(r, &id)| (id, self.row(r)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * (8 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (id, v) in self.iter() {
            out.extend_from_slice(&id.to_le_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated(format!(
                "header needs {HEADER_LEN} bytes, file has {}",
                bytes.len()
            )));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let record = 8 + 4 * dim;
        let expected = (count as u128) * (record as u128) + HEADER_LEN as u128;
        if (bytes.len() as u128) < expected {
            return Err(Error::Truncated(format!(
                "{count} records of dim {dim} need {expected} bytes, file has {}",
                bytes.len()
            )));
        }
        if (bytes.len() as u128) > expected {
            return Err(Error::invalid(format!(
                "{} trailing bytes after last record",
                bytes.len() as u128 - expected
            )));
        }
        let count = count as usize;
        let mut ids = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for rec in bytes[HEADER_LEN..].chunks_exact(record) {
            ids.push(u64::from_le_bytes(rec[..8].try_into().unwrap()));
            data.extend(
                rec[8..]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
            );
        }
        Self::new(dim, ids, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Keeps only the given ids, in the given order.
    pub fn subset(&self, ids: &[u64]) -> Result<Self> {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            data.extend_from_slice(self.vector(id)?);
        }
        Self::new(self.dim, ids.to_vec(), data)
    }
}

pub fn load_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    EmbeddingStore::load(path)
}

pub fn save_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    store.save(path)
}

fn check_dims(u: &[f32], v: &[f32]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    Ok(())
}

/// Dot product with a 64-bit accumulator.
pub fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum()
}

pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64> {
    check_dims(u, v)?;
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn euclidean_distance(u: &[f32], v: &[f32]) -> Result<f64> {
    check_dims(u, v)?;
    Ok(u.iter()
        .zip(v)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn file_size_matches_layout() {
        let s = EmbeddingStore::from_rows(4, vec![(3, vec![1.0; 4]), (9, vec![0.5; 4])]).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), 8 + 4 + 8 + 2 * (8 + 16));
        assert_eq!(&bytes[..8], b"MLSDEMB1");
        assert_eq!(EmbeddingStore::from_bytes(&bytes).unwrap(), s);
    }

    #[test]
    fn empty_store_is_valid() {
        let s = EmbeddingStore::new(3, vec![], vec![]).unwrap();
        let back = EmbeddingStore::from_bytes(&s.to_bytes()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 3);
    }

    #[test]
    fn nan_component_is_reported_with_its_id() {
        let mut bytes = EmbeddingStore::from_rows(2, vec![(5, vec![1.0, 2.0]), (7, vec![1.0, 2.0])])
            .unwrap()
            .to_bytes();
        let off = bytes.len() - 4;
        bytes[off..].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = EmbeddingStore::from_bytes(&bytes).unwrap_err();
        assert_eq!(err.to_string(), "non-finite value at id 7");
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let good = EmbeddingStore::from_rows(2, vec![(1, vec![1.0, 2.0])]).unwrap().to_bytes();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(EmbeddingStore::from_bytes(&bad), Err(Error::BadMagic)));
        assert!(matches!(
            EmbeddingStore::from_bytes(&good[..good.len() - 1]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(EmbeddingStore::from_bytes(&good[..15]), Err(Error::Truncated(_))));
        let dup = EmbeddingStore::new(2, vec![1, 1], vec![0.0; 4]);
        assert!(matches!(dup, Err(Error::DuplicateId(1))));
        // same id twice written by hand
        let mut twice = good.clone();
        twice[12..20].copy_from_slice(&2u64.to_le_bytes());
        twice.extend_from_slice(&good[20..]);
        assert!(matches!(EmbeddingStore::from_bytes(&twice), Err(Error::DuplicateId(1))));
    }

    #[test]
    fn cosine_examples() {
        let x = [0.3f32, -2.0, 7.5];
        assert!((cosine_similarity(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // 32 / sqrt(14 * 77)
        let c = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((c - 0.974_631_846_2).abs() < 1e-9, "{c}");
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm)));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn euclidean_examples() {
        let x = [1.5f32, -3.0];
        assert_eq!(euclidean_distance(&x, &x).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(euclidean_distance(&[0.0], &[3.0, 4.0]).is_err());
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let d = rng.gen_range(1..12);
            let mut v = || (0..d).map(|_| rng.gen_range(-10.0f32..10.0)).collect::<Vec<_>>();
            let (a, b, c) = (v(), v(), v());
            let ab = euclidean_distance(&a, &b).unwrap();
            let bc = euclidean_distance(&b, &c).unwrap();
            let ac = euclidean_distance(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-9);
            assert!((ab - euclidean_distance(&b, &a).unwrap()).abs() == 0.0);
        }
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
        (1usize..24).prop_flat_map(|d| {
            (
                prop::collection::vec(-100.0f32..100.0, d),
                prop::collection::vec(-100.0f32..100.0, d),
            )
        })
    }

    proptest! {
        #[test]
        fn cosine_scale_invariant((u, v) in vec_pair(), s in 0.01f32..100.0) {
            prop_assume!(dot(&u, &u) > 1e-6 && dot(&v, &v) > 1e-6);
            let c = cosine_similarity(&u, &v).unwrap();
            let su: Vec<f32> = u.iter().map(|x| x * s).collect();
            let cs = cosine_similarity(&su, &v).unwrap();
            prop_assert!((c - cs).abs() < 1e-6);
            prop_assert!((-1.0..=1.0).contains(&c));
        }

        #[test]
        fn distance_matches_polarization((u, v) in vec_pair()) {
            let d = euclidean_distance(&u, &v).unwrap();
            let rhs = dot(&u, &u) + dot(&v, &v) - 2.0 * dot(&u, &v);
            let scale = dot(&u, &u) + dot(&v, &v);
            prop_assert!((d * d - rhs).abs() <= 1e-4 * scale.max(1e-12));
        }

        #[test]
        fn bytes_round_trip(rows in prop::collection::btree_map(any::<u64>(), prop::collection::vec(-1e6f32..1e6, 3), 0..20)) {
            let s = EmbeddingStore::from_rows(3, rows).unwrap();
            let bytes = s.to_bytes();
            let back = EmbeddingStore::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back, s);
        }
    }
}
