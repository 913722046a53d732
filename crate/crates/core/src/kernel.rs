//! Fused scoring and per-bin reduction.
//!
//! Every query is scored against every database row, but scores never leave
//! the register tile: each one is immediately folded into the best-so-far
//! value and index of its bin `j >> w`. Only the `M x L` bin winners are
//! written out.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::metric::{beats, dot, half_norm, DenseMatrix, Direction, Metric};
use crate::microkernel::{self, Acc, MR, NR};
use crate::recall::BinPlan;

/// Block factors of the loop nest: `query_block` rows of Q are held while
/// the database streams past in blocks of `db_block` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub query_block: usize,
    pub db_block: usize,
}

impl BlockLayout {
    pub fn new(query_block: usize, db_block: usize) -> Self {
        Self {
            query_block,
            db_block,
        }
    }

    /// Both factors positive, and database blocks never straddle a bin
    /// boundary unless they contain whole bins.
    pub fn validate(&self, bin_width_exp: u32) -> Result<()> {
        if self.query_block == 0 || self.db_block == 0 {
            return Err(Error::invalid("block factors must be positive"));
        }
        let bin = 1usize
            .checked_shl(bin_width_exp)
            .ok_or_else(|| Error::invalid("bin width exponent too large"))?;
        if !self.db_block.is_multiple_of(bin) && !bin.is_multiple_of(self.db_block) {
            return Err(Error::invalid(alloc::format!(
                "database block {} and bin size {bin} do not divide one another",
                self.db_block
            )));
        }
        Ok(())
    }

    /// Bytes touched per block step: the query block, the packed database
    /// block and the accumulators of the bins that block overlaps.
    pub fn working_set_bytes(&self, d: usize, bin_width_exp: u32) -> usize {
        let db_rows = self.db_block.div_ceil(NR) * NR;
        4 * self.query_block * d + 4 * db_rows * d + 8 * self.query_block * self.live_bins(bin_width_exp)
    }

    /// Bins overlapped by one database block.
    pub fn live_bins(&self, bin_width_exp: u32) -> usize {
        match 1usize.checked_shl(bin_width_exp) {
            Some(bin) => self.db_block.div_ceil(bin).max(1),
            None => 1,
        }
    }
}

/// Cache budget for [`default_layout`].
pub const CACHE_BUDGET_BYTES: usize = 2 << 20;
/// Cap on the packed database block.
pub const DB_BLOCK_BYTES: usize = 256 << 10;

/// Deterministic block factors sized so the working set of
/// [`BlockLayout::working_set_bytes`] stays within [`CACHE_BUDGET_BYTES`].
pub fn default_layout(m: usize, n: usize, d: usize, w: u32) -> BlockLayout {
    let d = d.max(1);
    let n = n.max(1);
    let row_bytes = 4 * d;
    let limit = n.next_power_of_two();
    let mut jb = 1usize;
    while jb * 2 <= limit && jb * 2 * row_bytes <= DB_BLOCK_BYTES {
        jb *= 2;
    }
    let packed = 4 * jb.div_ceil(NR) * NR * d;
    let per_query = row_bytes + 8 * BlockLayout::new(1, jb).live_bins(w);
    let ib = (CACHE_BUDGET_BYTES.saturating_sub(packed) / per_query).clamp(1, m.max(1));
    BlockLayout::new(ib, jb)
}

/// `|x_j|^2 / 2` for every row.
pub fn precompute_half_norms(x: &DenseMatrix) -> Vec<f32> {
    x.iter_rows().map(half_norm).collect()
}

/// `2 m n d`, the scoring FLOPs of one full pass.
pub fn count_flops(m: usize, n: usize, d: usize) -> Result<u64> {
    [m, n, d]
        .iter()
        .try_fold(2u64, |acc, &v| acc.checked_mul(v as u64))
        .ok_or_else(|| Error::invalid("FLOP count overflows 64 bits"))
}

/// Per-query, per-bin winners of the fused reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub values: Vec<f32>,
    pub indices: Vec<u32>,
    pub rows: usize,
    pub plan: BinPlan,
    pub direction: Direction,
}

impl CandidateSet {
    #[inline]
    pub fn num_bins(&self) -> usize {
        self.plan.num_bins
    }

    #[inline]
    pub fn row_values(&self, i: usize) -> &[f32] {
        let l = self.num_bins();
        &self.values[i * l..(i + 1) * l]
    }

    #[inline]
    pub fn row_indices(&self, i: usize) -> &[u32] {
        let l = self.num_bins();
        &self.indices[i * l..(i + 1) * l]
    }

    /// Index carried by bins that saw no selectable score.
    #[inline]
    pub fn invalid_index(&self) -> u32 {
        self.plan.database_size as u32
    }
}

/// A validated PartialReduce invocation. Disjoint row ranges may be reduced
/// independently (and concurrently) via [`PartialReduce::reduce_rows`]; the
/// output does not depend on how rows are split or on the layout.
#[derive(Debug, Clone, Copy)]
pub struct PartialReduce<'a> {
    q: &'a DenseMatrix,
    x: &'a DenseMatrix,
    metric: Metric,
    plan: BinPlan,
    half_norms: Option<&'a [f32]>,
    layout: BlockLayout,
}

impl<'a> PartialReduce<'a> {
    pub fn new(
        q: &'a DenseMatrix,
        x: &'a DenseMatrix,
        metric: Metric,
        plan: &BinPlan,
        half_norms: Option<&'a [f32]>,
        layout: Option<BlockLayout>,
    ) -> Result<Self> {
        if q.cols() != x.cols() {
            return Err(Error::mismatch("query/database dimension", x.cols(), q.cols()));
        }
        if plan.database_size != x.rows() {
            return Err(Error::mismatch("plan database size", x.rows(), plan.database_size));
        }
        if x.rows() >= u32::MAX as usize {
            return Err(Error::invalid("database rows must fit in 32-bit indices"));
        }
        let expected_bins = x
            .rows()
            .div_ceil(1usize.checked_shl(plan.bin_width_exp).unwrap_or(usize::MAX));
        if plan.num_bins < expected_bins {
            return Err(Error::mismatch("plan bin count", expected_bins, plan.num_bins));
        }
        match (metric, half_norms) {
            (Metric::Euclidean, None) => {
                return Err(Error::invalid("Euclidean reduction needs precomputed half norms"))
            }
            (Metric::Euclidean, Some(h)) if h.len() != x.rows() => {
                return Err(Error::mismatch("half norm count", x.rows(), h.len()))
            }
            (Metric::Mips | Metric::Cosine, Some(_)) => {
                return Err(Error::invalid("half norms only apply to Euclidean reduction"))
            }
            _ => {}
        }
        let layout = layout.unwrap_or_else(|| {
            default_layout(q.rows(), x.rows(), x.cols(), plan.bin_width_exp)
        });
        layout.validate(plan.bin_width_exp)?;
        Ok(Self {
            q,
            x,
            metric,
            plan: *plan,
            half_norms,
            layout,
        })
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    pub fn plan(&self) -> &BinPlan {
        &self.plan
    }

    pub fn direction(&self) -> Direction {
        self.metric.direction()
    }

    /// Reduces query rows `rows` into `values`/`indices`, each of length
    /// `rows.len() * L`.
    pub fn reduce_rows(&self, rows: Range<usize>, values: &mut [f32], indices: &mut [u32]) {
        let l = self.plan.num_bins;
        assert!(rows.end <= self.q.rows());
        assert_eq!(values.len(), rows.len() * l);
        assert_eq!(indices.len(), rows.len() * l);
        let dir = self.direction();
        values.fill(dir.sentinel());
        indices.fill(self.plan.database_size as u32);
        let w = self.plan.bin_width_exp;
        let row0 = rows.start;
        self.drive(rows, |i, j0, scores| {
            let off = (i - row0) * l;
            let v = &mut values[off..off + l];
            let a = &mut indices[off..off + l];
            for (c, &s) in scores.iter().enumerate() {
                let j = j0 + c;
                let bin = j >> w;
                if beats(s, v[bin], dir) {
                    v[bin] = s;
                    a[bin] = j as u32;
                }
            }
        });
    }

    /// Writes every score of query rows `rows` into `out` (row-major,
    /// `rows.len() x N`). This is the materializing path the fused reduction
    /// avoids; it exists for baselines.
    pub fn score_rows(&self, rows: Range<usize>, out: &mut [f32]) {
        self.score_rows_strided(rows, out, self.x.rows());
    }

    /// [`PartialReduce::score_rows`] with output rows `stride >= N` floats
    /// apart. Columns past `N` are left untouched.
    pub fn score_rows_strided(&self, rows: Range<usize>, out: &mut [f32], stride: usize) {
        let n = self.x.rows();
        assert!(stride >= n);
        assert!(out.len() >= rows.len().saturating_sub(1) * stride + n || rows.is_empty());
        let row0 = rows.start;
        self.drive(rows, |i, j0, scores| {
            let off = (i - row0) * stride + j0;
            out[off..off + scores.len()].copy_from_slice(scores);
        });
    }

    /// Runs the whole reduction on the calling thread.
    pub fn run(&self) -> CandidateSet {
        let m = self.q.rows();
        let l = self.plan.num_bins;
        let mut values = vec![0.0; m * l];
        let mut indices = vec![0; m * l];
        self.reduce_rows(0..m, &mut values, &mut indices);
        CandidateSet {
            values,
            indices,
            rows: m,
            plan: self.plan,
            direction: self.direction(),
        }
    }

    /// Loop nest over query blocks, database blocks, query tiles and panels.
    /// `sink(i, j0, scores)` receives final scores of query `i` for database
    /// rows `j0..j0 + scores.len()`, in ascending `j0` for each `i`.
    fn drive<F: FnMut(usize, usize, &[f32])>(&self, rows: Range<usize>, mut sink: F) {
        let d = self.x.cols();
        let n = self.x.rows();
        let xs = self.x.as_slice();
        let BlockLayout {
            query_block: ib,
            db_block: jb,
        } = self.layout;
        let panels_per_block = jb.div_ceil(NR);
        let mut packed = vec![0.0f32; panels_per_block * NR * d];
        let mut scores = [0.0f32; NR];

        let mut qb = rows.start;
        while qb < rows.end {
            let qb_end = (qb + ib).min(rows.end);
            let mut jj = 0;
            while jj < n {
                let jj_end = (jj + jb).min(n);
                microkernel::pack_panels(xs, d, jj, jj_end, &mut packed);
                let panels = (jj_end - jj).div_ceil(NR);
                let mut i = qb;
                while i < qb_end {
                    if qb_end - i >= MR {
                        let q: [&[f32]; MR] = core::array::from_fn(|r| self.q.row(i + r));
                        for p in 0..panels {
                            let mut acc: Acc<MR> = [[0.0; NR]; MR];
                            microkernel::tile(q, &packed[p * d * NR..(p + 1) * d * NR], &mut acc);
                            let j0 = jj + p * NR;
                            let valid = NR.min(jj_end - j0);
                            for (r, lanes) in acc.iter().enumerate() {
                                self.finish(lanes, j0, &mut scores[..valid]);
                                sink(i + r, j0, &scores[..valid]);
                            }
                        }
                        i += MR;
                    } else {
                        let q = [self.q.row(i)];
                        for p in 0..panels {
                            let mut acc: Acc<1> = [[0.0; NR]; 1];
                            microkernel::tile(q, &packed[p * d * NR..(p + 1) * d * NR], &mut acc);
                            let j0 = jj + p * NR;
                            let valid = NR.min(jj_end - j0);
                            self.finish(&acc[0], j0, &mut scores[..valid]);
                            sink(i, j0, &scores[..valid]);
                        }
                        i += 1;
                    }
                }
                jj = jj_end;
            }
            qb = qb_end;
        }
    }

    #[inline(always)]
    fn finish(&self, lanes: &[f32; NR], j0: usize, out: &mut [f32]) {
        match self.half_norms {
            Some(h) => {
                for (c, s) in out.iter_mut().enumerate() {
                    *s = h[j0 + c] - lanes[c];
                }
            }
            None => out.copy_from_slice(&lanes[..out.len()]),
        }
    }
}

/// Fused scoring and per-bin reduction of every query against every
/// database row. `half_norms` must be [`precompute_half_norms`] of `x` for
/// Euclidean and absent otherwise. Cosine inputs are expected to be
/// normalized already.
pub fn partial_reduce(
    q: &DenseMatrix,
    x: &DenseMatrix,
    metric: Metric,
    plan: &BinPlan,
    half_norms: Option<&[f32]>,
    layout: Option<BlockLayout>,
) -> Result<CandidateSet> {
    Ok(PartialReduce::new(q, x, metric, plan, half_norms, layout)?.run())
}

/// Reference reduction: scores each row with [`dot`] and scans bins in
/// order. Quadratic memory-free but slow; used to cross-check the kernel.
pub fn partial_reduce_reference(
    q: &DenseMatrix,
    x: &DenseMatrix,
    metric: Metric,
    plan: &BinPlan,
    half_norms: Option<&[f32]>,
) -> CandidateSet {
    let dir = metric.direction();
    let l = plan.num_bins;
    let mut values = vec![dir.sentinel(); q.rows() * l];
    let mut indices = vec![x.rows() as u32; q.rows() * l];
    for (i, qi) in q.iter_rows().enumerate() {
        for (j, xj) in x.iter_rows().enumerate() {
            let ip = dot(qi, xj);
            let s = match half_norms {
                Some(h) => h[j] - ip,
                None => ip,
            };
            let slot = i * l + (j >> plan.bin_width_exp);
            if beats(s, values[slot], dir) {
                values[slot] = s;
                indices[slot] = j as u32;
            }
        }
    }
    CandidateSet {
        values,
        indices,
        rows: q.rows(),
        plan: *plan,
        direction: dir,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_rows() -> (DenseMatrix, DenseMatrix) {
        let q = DenseMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let x = DenseMatrix::from_rows(&[[0.5, 0.0], [2.0, 0.0], [-1.0, 0.0], [1.0, 0.0]]).unwrap();
        (q, x)
    }

    #[test]
    fn mips_two_bins() {
        let (q, x) = four_rows();
        let plan = BinPlan::with_width_exp(4, 1, 1).unwrap();
        let c = partial_reduce(&q, &x, Metric::Mips, &plan, None, None).unwrap();
        assert_eq!(c.values, [2.0, 1.0]);
        assert_eq!(c.indices, [1, 3]);
    }

    #[test]
    fn exact_mode_is_identity() {
        let (q, x) = four_rows();
        let plan = BinPlan::exact(4, 1);
        let c = partial_reduce(&q, &x, Metric::Mips, &plan, None, None).unwrap();
        assert_eq!(c.values, [0.5, 2.0, -1.0, 1.0]);
        assert_eq!(c.indices, [0, 1, 2, 3]);
    }

    #[test]
    fn euclidean_single_bin() {
        let q = DenseMatrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let x = DenseMatrix::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        let h = precompute_half_norms(&x);
        assert_eq!(h, [12.5, 0.0]);
        let plan = BinPlan::with_width_exp(2, 1, 1).unwrap();
        let c = partial_reduce(&q, &x, Metric::Euclidean, &plan, Some(&h), None).unwrap();
        assert_eq!(c.values, [0.0]);
        assert_eq!(c.indices, [1]);
    }

    #[test]
    fn argument_errors() {
        let (q, x) = four_rows();
        let plan = BinPlan::exact(4, 1);
        let bad_q = DenseMatrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        assert!(partial_reduce(&bad_q, &x, Metric::Mips, &plan, None, None).is_err());
        let wrong_plan = BinPlan::exact(5, 1);
        assert!(partial_reduce(&q, &x, Metric::Mips, &wrong_plan, None, None).is_err());
        assert!(partial_reduce(&q, &x, Metric::Euclidean, &plan, None, None).is_err());
        assert!(partial_reduce(&q, &x, Metric::Euclidean, &plan, Some(&[0.0; 3]), None).is_err());
        assert!(partial_reduce(&q, &x, Metric::Mips, &plan, Some(&[0.0; 4]), None).is_err());
        let bad_layout = BlockLayout::new(1, 3);
        let plan2 = BinPlan::with_width_exp(4, 1, 1).unwrap();
        assert!(partial_reduce(&q, &x, Metric::Mips, &plan2, None, Some(bad_layout)).is_err());
        assert!(partial_reduce(&q, &x, Metric::Mips, &plan2, None, Some(BlockLayout::new(0, 2))).is_err());
    }

    #[test]
    fn layout_examples() {
        assert_eq!(default_layout(1, 1, 1, 0), BlockLayout::new(1, 1));
        let big = default_layout(10_000, 1_000_000, 128, 12);
        assert!(big.query_block >= 8);
        big.validate(12).unwrap();
        // exact mode keeps only the block's own bins live
        let exact = default_layout(256, 1 << 20, 128, 0);
        assert!(exact.query_block >= 64, "{exact:?}");
        assert!(exact.working_set_bytes(128, 0) <= CACHE_BUDGET_BYTES);
        for w in 0..20 {
            default_layout(37, 5000, 33, w).validate(w).unwrap();
        }
    }

    #[test]
    fn flop_counts() {
        assert_eq!(count_flops(1, 1, 1).unwrap(), 2);
        assert_eq!(count_flops(10_000, 1_000_000, 128).unwrap(), 2_560_000_000_000);
        assert_eq!(count_flops(2, 3, 4).unwrap(), 48);
        assert!(count_flops(usize::MAX, usize::MAX, 2).is_err());
    }

    #[test]
    fn tail_bin_reduces_over_existing_rows_only() {
        let x = DenseMatrix::from_rows(&[[1.0], [2.0], [3.0], [4.0], [5.0]]).unwrap();
        let q = DenseMatrix::from_rows(&[[-1.0]]).unwrap();
        let plan = BinPlan::with_width_exp(5, 1, 2).unwrap();
        let c = partial_reduce(&q, &x, Metric::Mips, &plan, None, None).unwrap();
        assert_eq!(c.values, [-1.0, -5.0]);
        assert_eq!(c.indices, [0, 4]);
    }

    #[test]
    fn padded_bins_carry_the_sentinel() {
        let (q, x) = four_rows();
        let mut plan = BinPlan::with_width_exp(4, 1, 1).unwrap();
        plan.num_bins = 3;
        let c = partial_reduce(&q, &x, Metric::Mips, &plan, None, None).unwrap();
        assert_eq!(c.values[2], f32::NEG_INFINITY);
        assert_eq!(c.indices[2], 4);
    }

    #[test]
    fn nan_scores_are_never_selected() {
        let q = DenseMatrix::from_rows(&[[1.0]]).unwrap();
        let x = DenseMatrix::from_rows(&[[f32::NAN], [-3.0], [f32::NAN], [f32::NAN]]).unwrap();
        let plan = BinPlan::with_width_exp(4, 1, 1).unwrap();
        let c = partial_reduce(&q, &x, Metric::Mips, &plan, None, None).unwrap();
        assert_eq!(c.indices, [1, 4]);
    }
}
