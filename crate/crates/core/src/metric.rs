//! Dense row-major storage, similarity metrics and the comparison rule shared
//! by every selection path (kernel, rescoring, oracle).

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};

/// Row-major `rows x cols` matrix of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix must have at least one row and one column"));
        }
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::invalid("matrix size overflows usize"))?;
        if data.len() != expected {
            return Err(Error::mismatch("matrix data length", expected, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::mismatch("row length", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, alloc::vec![0.0; rows.saturating_mul(cols)])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    /// Copy of the matrix with every row scaled to unit L2 norm. Zero rows are
    /// left as zeros.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.cols) {
            let norm = libm::sqrtf(dot(row, row));
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        out
    }

    /// Copy with each row zero-extended to `cols`. Dot products and L2
    /// distances are unchanged.
    pub fn padded_to(&self, cols: usize) -> Result<Self> {
        if cols < self.cols {
            return Err(Error::invalid("cannot pad to fewer columns"));
        }
        let mut data = alloc::vec![0.0; self.rows * cols];
        for (dst, src) in data.chunks_exact_mut(cols).zip(self.iter_rows()) {
            dst[..src.len()].copy_from_slice(src);
        }
        Self::new(self.rows, cols, data)
    }

    /// Copy whose row `i` is row `perm[i]` of `self`.
    pub fn permuted_rows(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.rows {
            return Err(Error::mismatch("permutation length", self.rows, perm.len()));
        }
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            if p >= self.rows {
                return Err(Error::invalid("permutation index out of range"));
            }
            data.extend_from_slice(self.row(p));
        }
        Self::new(self.rows, self.cols, data)
    }
}

/// Whether larger or smaller scores are better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Max,
    Min,
}

impl Direction {
    /// The value every bin starts from; any real score beats it.
    #[inline]
    pub fn sentinel(self) -> f32 {
        match self {
            Direction::Max => f32::NEG_INFINITY,
            Direction::Min => f32::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    /// Maximum inner product.
    Mips,
    /// Cosine similarity; rows are L2-normalized and then searched as MIPS.
    Cosine,
    /// Squared L2 distance, ranked through the relaxed form `|x|^2/2 - <q,x>`.
    Euclidean,
}

impl Metric {
    #[inline]
    pub fn direction(self) -> Direction {
        match self {
            Metric::Mips | Metric::Cosine => Direction::Max,
            Metric::Euclidean => Direction::Min,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mips => "mips",
            Metric::Cosine => "cosine",
            Metric::Euclidean => "l2",
        }
    }
}

impl core::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mips" | "dot" => Ok(Metric::Mips),
            "cosine" | "angular" => Ok(Metric::Cosine),
            "l2" | "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::invalid(alloc::format!("unknown metric `{other}`"))),
        }
    }
}

/// A score paired with the database row that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredIndex {
    pub value: f32,
    pub index: u32,
}

impl ScoredIndex {
    #[inline]
    pub fn new(value: f32, index: u32) -> Self {
        Self { value, index }
    }
}

/// Strict "a beats b" on values alone. Ties and any NaN operand give `false`,
/// so a reduction scanning indices in ascending order keeps the first seen.
#[inline(always)]
pub fn beats(a: f32, b: f32, direction: Direction) -> bool {
    match direction {
        Direction::Max => a > b,
        Direction::Min => a < b,
    }
}

/// `compare(a, b)` is true iff `a.value` strictly beats `b.value`.
#[inline]
pub fn compare(a: ScoredIndex, b: ScoredIndex, direction: Direction) -> bool {
    beats(a.value, b.value, direction)
}

/// Total best-first order: better value first, NaN last, equal values by
/// ascending index. `-0.0` and `0.0` are equal here, as in [`beats`].
#[inline]
pub fn rank_order(a: &ScoredIndex, b: &ScoredIndex, direction: Direction) -> Ordering {
    if beats(a.value, b.value, direction) {
        return Ordering::Less;
    }
    if beats(b.value, a.value, direction) {
        return Ordering::Greater;
    }
    match (a.value.is_nan(), b.value.is_nan()) {
        (false, true) => Ordering::Less,
        (true, false) => Ordering::Greater,
        _ => a.index.cmp(&b.index),
    }
}

/// Dot product accumulated in `f32` in ascending coordinate order. The blocked
/// kernel reproduces exactly this sequence of roundings per lane.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `|x|^2 / 2`, the per-row term of the relaxed Euclidean score.
#[inline]
pub fn half_norm(x: &[f32]) -> f32 {
    dot(x, x) * 0.5
}

/// Score of one query/database pair. `half_norm` must be given exactly when
/// `metric` is Euclidean, in which case the relaxed distance
/// `half_norm - <q,x>` is returned.
pub fn score(q: &[f32], x: &[f32], metric: Metric, half_norm: Option<f32>) -> Result<f32> {
    if q.len() != x.len() {
        return Err(Error::mismatch("vector dimension", q.len(), x.len()));
    }
    let ip = dot(q, x);
    match (metric, half_norm) {
        (Metric::Euclidean, Some(h)) => Ok(h - ip),
        (Metric::Euclidean, None) => Err(Error::invalid("Euclidean scoring needs the half norm")),
        (_, None) => Ok(ip),
        (_, Some(_)) => Err(Error::invalid("half norm only applies to Euclidean scoring")),
    }
}
