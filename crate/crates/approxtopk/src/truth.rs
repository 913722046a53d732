//! Ground-truth computation and an on-disk cache keyed by content hash.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use approxtopk_core::oracle::brute_force_topk;
use approxtopk_core::rescore::TopKResult;
use approxtopk_core::{DenseMatrix, Metric};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::vecs::{read_ivecs, write_ivecs, Vecs};

/// Exact top-k neighbor indices, `rows x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub rows: usize,
    pub k: usize,
    pub indices: Vec<u32>,
}

impl Truth {
    pub fn from_topk(t: &TopKResult) -> Self {
        Self {
            rows: t.rows,
            k: t.k,
            indices: t.indices.clone(),
        }
    }

    pub fn from_ivecs(v: Vecs<i32>) -> Result<Self> {
        let indices = v
            .data
            .iter()
            .map(|&a| u32::try_from(a).map_err(|_| Error::format(0, format!("negative neighbor index {a}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rows: v.rows,
            k: v.dim,
            indices,
        })
    }

    pub fn to_ivecs(&self) -> Vec<i32> {
        self.indices.iter().map(|&a| a as i32).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_ivecs(path, self.k, &self.to_ivecs())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_ivecs(read_ivecs(path)?)
    }
}

/// Brute-force truth with query rows split over `workers` threads.
pub fn compute_truth(base: &DenseMatrix, queries: &DenseMatrix, metric: Metric, k: usize, workers: usize) -> Result<Truth> {
    let m = queries.rows();
    let chunk = m.div_ceil(workers.max(1)).max(1);
    let parts: Vec<Result<TopKResult>> = thread::scope(|s| {
        let handles: Vec<_> = (0..m)
            .step_by(chunk)
            .map(|start| {
                let end = (start + chunk).min(m);
                s.spawn(move || -> Result<TopKResult> {
                    let rows: Vec<&[f32]> = (start..end).map(|i| queries.row(i)).collect();
                    let q = DenseMatrix::from_rows(&rows)?;
                    Ok(brute_force_topk(&q, base, metric, k)?)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("truth worker panicked")).collect()
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Truth::from_topk(&TopKResult::concat(&parts)?))
}

/// Hex SHA-256 over the database, the queries, the metric and k.
pub fn truth_key(base: &DenseMatrix, queries: &DenseMatrix, metric: Metric, k: usize) -> String {
    let mut h = Sha256::new();
    for m in [base, queries] {
        h.update((m.rows() as u64).to_le_bytes());
        h.update((m.cols() as u64).to_le_bytes());
        for v in m.as_slice() {
            h.update(v.to_le_bytes());
        }
    }
    h.update(metric.name().as_bytes());
    h.update((k as u64).to_le_bytes());
    format!("{:x}", h.finalize())
}

/// Directory of `<key>.ivecs` truth files.
#[derive(Debug, Clone)]
pub struct TruthCache {
    dir: PathBuf,
}

impl TruthCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.ivecs"))
    }

    /// Returns the cached truth for these exact inputs, computing and
    /// storing it on a miss. The flag reports a hit. An entry whose shape
    /// does not fit the queries and k is recomputed.
    pub fn get_or_compute(
        &self,
        base: &DenseMatrix,
        queries: &DenseMatrix,
        metric: Metric,
        k: usize,
        workers: usize,
    ) -> Result<(Truth, bool)> {
        let path = self.path_for(&truth_key(base, queries, metric, k));
        if path.exists() {
            if let Ok(t) = Truth::load(&path) {
                if t.rows == queries.rows() && t.k == k && t.indices.iter().all(|&a| (a as usize) < base.rows()) {
                    return Ok((t, true));
                }
            }
        }
        let t = compute_truth(base, queries, metric, k, workers)?;
        t.save(&path)?;
        Ok((t, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_synthetic, Distribution};

    #[test]
    fn cache_hits_only_for_identical_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let cache = TruthCache::new(dir.path()).unwrap();
        let base = gen_synthetic(300, 8, Distribution::Gaussian, 1).unwrap();
        let q = gen_synthetic(5, 8, Distribution::Gaussian, 2).unwrap();
        let (t1, hit) = cache.get_or_compute(&base, &q, Metric::Euclidean, 4, 2).unwrap();
        assert!(!hit);
        let (t2, hit) = cache.get_or_compute(&base, &q, Metric::Euclidean, 4, 1).unwrap();
        assert!(hit);
        assert_eq!(t1, t2);
        assert_eq!(t1, Truth::from_topk(&brute_force_topk(&q, &base, Metric::Euclidean, 4).unwrap()));

        // any change to the data, metric or k is a different key
        let mut changed = base.clone();
        changed.row_mut(7)[0] += 1.0;
        assert!(!cache.get_or_compute(&changed, &q, Metric::Euclidean, 4, 1).unwrap().1);
        assert!(!cache.get_or_compute(&base, &q, Metric::Mips, 4, 1).unwrap().1);
        assert!(!cache.get_or_compute(&base, &q, Metric::Euclidean, 3, 1).unwrap().1);
    }

    #[test]
    fn corrupt_entries_are_recomputed() {
        let dir = tempfile::tempdir().unwrap();
        let cache = TruthCache::new(dir.path()).unwrap();
        let base = gen_synthetic(100, 4, Distribution::Gaussian, 5).unwrap();
        let q = gen_synthetic(3, 4, Distribution::Gaussian, 6).unwrap();
        let path = cache.path_for(&truth_key(&base, &q, Metric::Mips, 2));
        fs::write(&path, b"garbage").unwrap();
        let (t, hit) = cache.get_or_compute(&base, &q, Metric::Mips, 2, 1).unwrap();
        assert!(!hit);
        assert_eq!(Truth::load(&path).unwrap(), t);
    }
}
