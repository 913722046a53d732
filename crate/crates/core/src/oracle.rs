//! Brute-force ground truth and recall measurement.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::metric::{half_norm, rank_order, score, DenseMatrix, Metric, ScoredIndex};
use crate::rescore::TopKResult;

/// Exact top-k by scoring every pair with [`score`] and fully sorting each
/// query's scores.
pub fn brute_force_topk(q: &DenseMatrix, x: &DenseMatrix, metric: Metric, k: usize) -> Result<TopKResult> {
    if k == 0 || k > x.rows() {
        return Err(Error::invalid(alloc::format!(
            "k = {k} must be in 1..={}",
            x.rows()
        )));
    }
    if q.cols() != x.cols() {
        return Err(Error::mismatch("query/database dimension", x.cols(), q.cols()));
    }
    let (q, x) = match metric {
        Metric::Cosine => (
            alloc::borrow::Cow::Owned(q.normalized()),
            alloc::borrow::Cow::Owned(x.normalized()),
        ),
        _ => (alloc::borrow::Cow::Borrowed(q), alloc::borrow::Cow::Borrowed(x)),
    };
    let half: Option<Vec<f32>> =
        (metric == Metric::Euclidean).then(|| x.iter_rows().map(half_norm).collect());
    let dir = metric.direction();
    let mut values = Vec::with_capacity(q.rows() * k);
    let mut indices = Vec::with_capacity(q.rows() * k);
    let mut row: Vec<ScoredIndex> = Vec::with_capacity(x.rows());
    for qi in q.iter_rows() {
        row.clear();
        for (j, xj) in x.iter_rows().enumerate() {
            let s = score(qi, xj, metric, half.as_ref().map(|h| h[j]))?;
            row.push(ScoredIndex::new(s, j as u32));
        }
        row.sort_by(|a, b| rank_order(a, b, dir));
        for s in &row[..k] {
            values.push(s.value);
            indices.push(s.index);
        }
    }
    Ok(TopKResult {
        values,
        indices,
        rows: q.rows(),
        k,
        direction: dir,
    })
}

/// Fraction of a query's true top-k indices that were retrieved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallScore {
    pub value: f64,
    pub hits: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub per_query: Vec<RecallScore>,
    pub mean: f64,
}

/// Recall of `result` against `truth`, on index sets only.
pub fn measure_recall(result: &TopKResult, truth: &TopKResult) -> Result<RecallReport> {
    if result.rows != truth.rows || result.k != truth.k {
        return Err(Error::invalid(alloc::format!(
            "shape mismatch: result {}x{}, truth {}x{}",
            result.rows,
            result.k,
            truth.rows,
            truth.k
        )));
    }
    recall_from_indices(&result.indices, result.k, &truth.indices, truth.k, result.rows)
}

/// Recall of `result` rows (`result_k` wide) against the first `k` columns
/// of `truth` rows (`truth_k` wide, `truth_k >= k`) where `k = result_k`.
pub fn recall_from_indices(
    result: &[u32],
    result_k: usize,
    truth: &[u32],
    truth_k: usize,
    rows: usize,
) -> Result<RecallReport> {
    let k = result_k;
    if k == 0 || truth_k < k {
        return Err(Error::invalid("truth must have at least k >= 1 columns"));
    }
    if result.len() != rows * k {
        return Err(Error::mismatch("result length", rows * k, result.len()));
    }
    if truth.len() != rows * truth_k {
        return Err(Error::mismatch("truth length", rows * truth_k, truth.len()));
    }
    let mut per_query = Vec::with_capacity(rows);
    let mut got: Vec<u32> = Vec::with_capacity(k);
    for i in 0..rows {
        got.clear();
        got.extend_from_slice(&result[i * k..(i + 1) * k]);
        got.sort_unstable();
        got.dedup();
        let want = &truth[i * truth_k..i * truth_k + k];
        let hits = want.iter().filter(|a| got.binary_search(a).is_ok()).count();
        per_query.push(RecallScore {
            value: hits as f64 / k as f64,
            hits,
            k,
        });
    }
    let mean = if rows == 0 {
        0.0
    } else {
        per_query.iter().map(|r| r.value).sum::<f64>() / rows as f64
    };
    Ok(RecallReport { per_query, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::Direction;

    fn topk(indices: &[u32], k: usize) -> TopKResult {
        TopKResult {
            values: alloc::vec![0.0; indices.len()],
            indices: indices.to_vec(),
            rows: indices.len() / k,
            k,
            direction: Direction::Max,
        }
    }

    #[test]
    fn brute_force_examples() {
        let q = DenseMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let x = DenseMatrix::from_rows(&[[0.5, 0.0], [2.0, 0.0], [-1.0, 0.0], [1.0, 0.0]]).unwrap();
        let t = brute_force_topk(&q, &x, Metric::Mips, 2).unwrap();
        assert_eq!(t.values, [2.0, 1.0]);
        assert_eq!(t.indices, [1, 3]);

        let all = brute_force_topk(&q, &x, Metric::Mips, 4).unwrap();
        assert_eq!(all.indices, [1, 3, 0, 2]);

        let q = DenseMatrix::from_rows(&[[0.1, 0.1]]).unwrap();
        let x = DenseMatrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert_eq!(brute_force_topk(&q, &x, Metric::Euclidean, 1).unwrap().indices, [0]);
        assert!(brute_force_topk(&q, &x, Metric::Euclidean, 3).is_err());
        assert!(brute_force_topk(&q, &x, Metric::Euclidean, 0).is_err());
    }

    #[test]
    fn recall_examples() {
        let a = topk(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10], 10);
        assert_eq!(measure_recall(&a, &a).unwrap().mean, 1.0);
        let b = topk(&[11, 12, 13, 14, 15, 16, 17, 18, 19, 20], 10);
        assert_eq!(measure_recall(&a, &b).unwrap().mean, 0.0);
        let c = topk(&[1, 2, 3, 4, 5, 16, 17, 18, 19, 20], 10);
        let r = measure_recall(&c, &a).unwrap();
        assert_eq!(r.mean, 0.5);
        assert_eq!(r.per_query[0].hits, 5);
        assert!(measure_recall(&a, &topk(&[1, 2], 2)).is_err());
    }

    #[test]
    fn truth_may_be_wider_than_k() {
        let r = recall_from_indices(&[3, 1], 2, &[1, 3, 9, 9], 4, 1).unwrap();
        assert_eq!(r.mean, 1.0);
        assert!(recall_from_indices(&[3, 1], 2, &[1], 1, 1).is_err());
    }
}
