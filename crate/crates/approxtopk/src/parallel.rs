//! Multi-threaded drivers: workers own disjoint, contiguous ranges of query
//! rows and share the database read-only. Output is identical for every
//! worker count.

use std::thread;

use approxtopk_core::kernel::{CandidateSet, PartialReduce};
use approxtopk_core::recall::{plan_bins, BinPlan};
use approxtopk_core::rescore::{exact_rescore_rows, prepare, SearchOutput, SearchParams, TopKResult};
use approxtopk_core::{DenseMatrix, Metric};

use crate::error::Result;

/// Worker count from the environment's available parallelism.
pub fn default_workers() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

fn row_chunk(rows: usize, workers: usize) -> usize {
    rows.div_ceil(workers.max(1)).max(1)
}

/// Runs `kernel` over all query rows with up to `workers` threads.
pub fn reduce_parallel(kernel: &PartialReduce<'_>, rows: usize, workers: usize) -> CandidateSet {
    let plan = *kernel.plan();
    let l = plan.num_bins;
    let mut values = vec![0.0f32; rows * l];
    let mut indices = vec![0u32; rows * l];
    let chunk = row_chunk(rows, workers);
    if workers <= 1 || rows <= chunk {
        kernel.reduce_rows(0..rows, &mut values, &mut indices);
    } else {
        thread::scope(|s| {
            for (t, (v, a)) in values
                .chunks_mut(chunk * l)
                .zip(indices.chunks_mut(chunk * l))
                .enumerate()
            {
                let start = t * chunk;
                let end = start + v.len() / l;
                s.spawn(move || kernel.reduce_rows(start..end, v, a));
            }
        });
    }
    CandidateSet {
        values,
        indices,
        rows,
        plan,
        direction: kernel.direction(),
    }
}

/// Exact rescoring with rows split across threads.
pub fn rescore_parallel(c: &CandidateSet, k: usize, workers: usize) -> Result<TopKResult> {
    let rows = c.rows;
    let mut values = vec![0.0f32; rows * k];
    let mut indices = vec![0u32; rows * k];
    let chunk = row_chunk(rows, workers);
    if workers <= 1 || rows <= chunk {
        exact_rescore_rows(c, k, 0..rows, &mut values, &mut indices)?;
    } else {
        thread::scope(|s| -> Result<()> {
            let handles: Vec<_> = values
                .chunks_mut(chunk * k)
                .zip(indices.chunks_mut(chunk * k))
                .enumerate()
                .map(|(t, (v, a))| {
                    let start = t * chunk;
                    let end = start + v.len() / k;
                    s.spawn(move || exact_rescore_rows(c, k, start..end, v, a))
                })
                .collect();
            for h in handles {
                h.join().expect("rescoring worker panicked")?;
            }
            Ok(())
        })?;
    }
    Ok(TopKResult {
        values,
        indices,
        rows,
        k,
        direction: c.direction,
    })
}

/// [`approxtopk_core::search`] with the reduction and rescoring spread over
/// `workers` threads.
pub fn search_parallel(
    q: &DenseMatrix,
    x: &DenseMatrix,
    metric: Metric,
    k: usize,
    params: &SearchParams,
    workers: usize,
) -> Result<SearchOutput> {
    if k == 0 {
        return Err(approxtopk_core::Error::InvalidArgument("k must be at least 1".into()).into());
    }
    let plan = plan_bins(x.rows(), k, params.recall_target, params.size_override)?;
    search_parallel_with_plan(q, x, metric, k, &plan, params, workers)
}

pub fn search_parallel_with_plan(
    q: &DenseMatrix,
    x: &DenseMatrix,
    metric: Metric,
    k: usize,
    plan: &BinPlan,
    params: &SearchParams,
    workers: usize,
) -> Result<SearchOutput> {
    let prep = prepare(q, x, metric);
    let kernel = PartialReduce::new(
        &prep.queries,
        &prep.database,
        metric,
        plan,
        prep.half_norms.as_deref(),
        params.layout,
    )?;
    let candidates = reduce_parallel(&kernel, q.rows(), workers);
    if params.aggregate {
        Ok(SearchOutput::TopK(rescore_parallel(&candidates, k, workers)?))
    } else {
        Ok(SearchOutput::Candidates(candidates))
    }
}

/// Materializes the full `M x N` score matrix with up to `workers` threads.
pub fn score_matrix_parallel(kernel: &PartialReduce<'_>, rows: usize, n: usize, workers: usize) -> Vec<f32> {
    score_matrix_strided(kernel, rows, n, n, workers)
}

/// Score matrix with rows `stride >= n` floats apart.
pub fn score_matrix_strided(kernel: &PartialReduce<'_>, rows: usize, n: usize, stride: usize, workers: usize) -> Vec<f32> {
    assert!(stride >= n);
    let mut out = vec![0.0f32; rows * stride];
    let chunk = row_chunk(rows, workers);
    if workers <= 1 || rows <= chunk {
        kernel.score_rows_strided(0..rows, &mut out, stride);
    } else {
        thread::scope(|s| {
            for (t, part) in out.chunks_mut(chunk * stride).enumerate() {
                let start = t * chunk;
                let end = start + part.len() / stride;
                s.spawn(move || kernel.score_rows_strided(start..end, part, stride));
            }
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approxtopk_core::search;

    fn data() -> (DenseMatrix, DenseMatrix) {
        let x = DenseMatrix::new(500, 6, (0..3000).map(|v| ((v * 7919) % 1000) as f32 / 500.0 - 1.0).collect()).unwrap();
        let q = DenseMatrix::new(13, 6, (0..78).map(|v| ((v * 104729) % 997) as f32 / 498.0 - 1.0).collect()).unwrap();
        (x, q)
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (x, q) = data();
        for metric in [Metric::Mips, Metric::Cosine, Metric::Euclidean] {
            let params = SearchParams::with_recall(0.9);
            let serial = search(&q, &x, metric, 5, &params).unwrap();
            for workers in [1, 2, 3, 8, 64] {
                assert_eq!(search_parallel(&q, &x, metric, 5, &params, workers).unwrap(), serial);
            }
            let raw = SearchParams {
                aggregate: false,
                ..params
            };
            assert_eq!(
                search_parallel(&q, &x, metric, 5, &raw, 4).unwrap(),
                search(&q, &x, metric, 5, &raw).unwrap()
            );
        }
    }

    #[test]
    fn score_matrix_matches_serial() {
        let (x, q) = data();
        let plan = BinPlan::exact(x.rows(), 1);
        let kernel = PartialReduce::new(&q, &x, Metric::Mips, &plan, None, None).unwrap();
        let serial = score_matrix_parallel(&kernel, q.rows(), x.rows(), 1);
        assert_eq!(score_matrix_parallel(&kernel, q.rows(), x.rows(), 5), serial);
        assert_eq!(serial[3 * 500 + 17], approxtopk_core::metric::dot(q.row(3), x.row(17)));
        let padded = score_matrix_strided(&kernel, q.rows(), x.rows(), 516, 3);
        for (a, b) in padded.chunks_exact(516).zip(serial.chunks_exact(500)) {
            assert_eq!(&a[..500], b);
        }
    }
}
