//! Exact top-k over the per-bin candidates, and the composed search entry
//! point.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::kernel::{precompute_half_norms, BlockLayout, CandidateSet, PartialReduce};
use crate::metric::{rank_order, DenseMatrix, Direction, Metric, ScoredIndex};
use crate::recall::{plan_bins, BinPlan};

/// Exact per-query top-k, best-first, ties by ascending index.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKResult {
    pub values: Vec<f32>,
    pub indices: Vec<u32>,
    pub rows: usize,
    pub k: usize,
    pub direction: Direction,
}

impl TopKResult {
    #[inline]
    pub fn row_values(&self, i: usize) -> &[f32] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub fn row_indices(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// Rewrites every index through `map` (e.g. undoing a database shuffle).
    pub fn remap_indices(&mut self, map: &[usize]) {
        for a in &mut self.indices {
            *a = map[*a as usize] as u32;
        }
    }

    /// Stacks results computed for consecutive query batches.
    pub fn concat(parts: &[TopKResult]) -> Result<TopKResult> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let mut out = TopKResult {
            values: Vec::new(),
            indices: Vec::new(),
            rows: 0,
            k: first.k,
            direction: first.direction,
        };
        for p in parts {
            if p.k != first.k || p.direction != first.direction {
                return Err(Error::invalid("results disagree on k or direction"));
            }
            out.values.extend_from_slice(&p.values);
            out.indices.extend_from_slice(&p.indices);
            out.rows += p.rows;
        }
        Ok(out)
    }
}

/// Selection algorithm used by [`exact_rescore_with`]. Both produce
/// identical output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    /// Quickselect partition then sort of the k survivors.
    #[default]
    Partial,
    /// Bitonic sorting network over the padded row, then truncation.
    Bitonic,
}

/// Exact top-k of every candidate row; bins that never saw a score are
/// skipped.
pub fn exact_rescore(c: &CandidateSet, k: usize) -> Result<TopKResult> {
    exact_rescore_with(c, k, Selection::Partial)
}

pub fn exact_rescore_with(c: &CandidateSet, k: usize, method: Selection) -> Result<TopKResult> {
    let mut values = Vec::with_capacity(c.rows * k);
    let mut indices = Vec::with_capacity(c.rows * k);
    let mut scratch: Vec<ScoredIndex> = Vec::with_capacity(c.num_bins());
    for i in 0..c.rows {
        rescore_row(c, i, k, method, &mut scratch, &mut values, &mut indices)?;
    }
    Ok(TopKResult {
        values,
        indices,
        rows: c.rows,
        k,
        direction: c.direction,
    })
}

/// Rescores rows `rows` of `c` into preallocated `values`/`indices` of
/// length `rows.len() * k`; the row-parallel building block.
pub fn exact_rescore_rows(
    c: &CandidateSet,
    k: usize,
    rows: core::ops::Range<usize>,
    values: &mut [f32],
    indices: &mut [u32],
) -> Result<()> {
    let mut v = Vec::with_capacity(k);
    let mut a = Vec::with_capacity(k);
    let mut scratch = Vec::with_capacity(c.num_bins());
    for (slot, i) in rows.enumerate() {
        v.clear();
        a.clear();
        rescore_row(c, i, k, Selection::Partial, &mut scratch, &mut v, &mut a)?;
        values[slot * k..(slot + 1) * k].copy_from_slice(&v);
        indices[slot * k..(slot + 1) * k].copy_from_slice(&a);
    }
    Ok(())
}

fn rescore_row(
    c: &CandidateSet,
    i: usize,
    k: usize,
    method: Selection,
    scratch: &mut Vec<ScoredIndex>,
    values: &mut Vec<f32>,
    indices: &mut Vec<u32>,
) -> Result<()> {
    let invalid = c.invalid_index();
    let dir = c.direction;
    scratch.clear();
    scratch.extend(
        c.row_values(i)
            .iter()
            .zip(c.row_indices(i))
            .filter(|(_, &a)| a != invalid)
            .map(|(&v, &a)| ScoredIndex::new(v, a)),
    );
    if k > scratch.len() {
        return Err(Error::invalid(alloc::format!(
            "k = {k} exceeds the {} valid candidates of query {i}",
            scratch.len()
        )));
    }
    match method {
        Selection::Partial => select_top(scratch, k, dir),
        Selection::Bitonic => bitonic_top(scratch, k, dir),
    }
    for s in &scratch[..k] {
        values.push(s.value);
        indices.push(s.index);
    }
    Ok(())
}

/// Leaves the best `k` of `items` sorted best-first in `items[..k]`.
pub fn select_top(items: &mut [ScoredIndex], k: usize, dir: Direction) {
    if k == 0 {
        return;
    }
    let cmp = |a: &ScoredIndex, b: &ScoredIndex| rank_order(a, b, dir);
    if k < items.len() {
        items.select_nth_unstable_by(k - 1, cmp);
    }
    items[..k].sort_unstable_by(cmp);
}

/// Bitonic network sort of `items` (padded to a power of two with entries
/// that order last); the best `k` end up in `items[..k]`.
pub fn bitonic_top(items: &mut Vec<ScoredIndex>, k: usize, dir: Direction) {
    let len = items.len();
    let padded = len.next_power_of_two();
    items.resize(padded, ScoredIndex::new(f32::NAN, u32::MAX));
    let cmp = |a: &ScoredIndex, b: &ScoredIndex| rank_order(a, b, dir);
    bitonic_sort_by(items, cmp);
    items.truncate(len);
    debug_assert!(k <= len);
}

/// In-place bitonic sort; `items.len()` must be a power of two. Performs
/// `n/2 * log n * (log n + 1) / 2` compare-exchanges.
pub fn bitonic_sort_by<T, F>(items: &mut [T], mut cmp: F)
where
    F: FnMut(&T, &T) -> Ordering,
{
    let n = items.len();
    assert!(n.is_power_of_two() || n == 0, "bitonic sort needs a power-of-two length");
    let mut size = 2;
    while size <= n {
        let mut stride = size / 2;
        while stride > 0 {
            for i in 0..n {
                let j = i ^ stride;
                if j > i {
                    let ascending = i & size == 0;
                    let out_of_order = cmp(&items[i], &items[j]) == Ordering::Greater;
                    if out_of_order == ascending {
                        items.swap(i, j);
                    }
                }
            }
            stride /= 2;
        }
        size *= 2;
    }
}

/// Output of [`search`]: exact top-k, or the raw per-bin candidates when
/// aggregation is off.
#[derive(Debug, Clone, PartialEq)]
pub enum SearchOutput {
    TopK(TopKResult),
    Candidates(CandidateSet),
}

impl SearchOutput {
    pub fn into_topk(self) -> Option<TopKResult> {
        match self {
            SearchOutput::TopK(t) => Some(t),
            SearchOutput::Candidates(_) => None,
        }
    }

    pub fn into_candidates(self) -> Option<CandidateSet> {
        match self {
            SearchOutput::Candidates(c) => Some(c),
            SearchOutput::TopK(_) => None,
        }
    }
}

/// Options of a search call beyond the query, database, metric and k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    pub recall_target: f64,
    /// Run exact rescoring; when false the per-bin candidates are returned.
    pub aggregate: bool,
    /// Database size the bin plan is derived from, if not `x.rows()`.
    pub size_override: Option<usize>,
    pub layout: Option<BlockLayout>,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            recall_target: 0.95,
            aggregate: true,
            size_override: None,
            layout: None,
        }
    }
}

impl SearchParams {
    pub fn with_recall(recall_target: f64) -> Self {
        Self {
            recall_target,
            ..Self::default()
        }
    }
}

/// Inputs prepared for the kernel: normalized copies for Cosine and half
/// norms for Euclidean.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    pub queries: alloc::borrow::Cow<'a, DenseMatrix>,
    pub database: alloc::borrow::Cow<'a, DenseMatrix>,
    pub half_norms: Option<Vec<f32>>,
}

pub fn prepare<'a>(q: &'a DenseMatrix, x: &'a DenseMatrix, metric: Metric) -> Prepared<'a> {
    use alloc::borrow::Cow;
    match metric {
        Metric::Mips => Prepared {
            queries: Cow::Borrowed(q),
            database: Cow::Borrowed(x),
            half_norms: None,
        },
        Metric::Cosine => Prepared {
            queries: Cow::Owned(q.normalized()),
            database: Cow::Owned(x.normalized()),
            half_norms: None,
        },
        Metric::Euclidean => Prepared {
            queries: Cow::Borrowed(q),
            database: Cow::Borrowed(x),
            half_norms: Some(precompute_half_norms(x)),
        },
    }
}

/// Plans bins for the recall target, runs the fused reduction and, when
/// `params.aggregate`, exact rescoring. Single-threaded.
pub fn search(
    q: &DenseMatrix,
    x: &DenseMatrix,
    metric: Metric,
    k: usize,
    params: &SearchParams,
) -> Result<SearchOutput> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let plan = plan_bins(x.rows(), k, params.recall_target, params.size_override)?;
    search_with_plan(q, x, metric, k, &plan, params)
}

pub fn search_with_plan(
    q: &DenseMatrix,
    x: &DenseMatrix,
    metric: Metric,
    k: usize,
    plan: &BinPlan,
    params: &SearchParams,
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
    let candidates = kernel.run();
    if params.aggregate {
        Ok(SearchOutput::TopK(exact_rescore(&candidates, k)?))
    } else {
        Ok(SearchOutput::Candidates(candidates))
    }
}
