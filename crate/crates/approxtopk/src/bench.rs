//! Speed/recall sweeps and the materializing baseline.

use std::io::Write;
use std::time::{Duration, Instant};

use approxtopk_core::kernel::{count_flops, PartialReduce};
use approxtopk_core::metric::Direction;
use approxtopk_core::oracle::recall_from_indices;
use approxtopk_core::recall::{plan_bins, BinPlan};
use approxtopk_core::rescore::{prepare, SearchOutput, SearchParams, TopKResult};
use approxtopk_core::roofline::{diagnose, HardwareSpec};
use approxtopk_core::{DenseMatrix, Metric};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::parallel::{score_matrix_strided, search_parallel_with_plan};
use crate::specfile::NamedProfile;
use crate::truth::Truth;

pub const BENCH_CSV_HEADER: &str = "recall_target,measured_recall,qps,gflops,l,w";

/// One row of the speed/recall CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchPoint {
    pub recall_target: f64,
    pub measured_recall: f64,
    pub qps: f64,
    pub gflops: f64,
    pub l: usize,
    pub w: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub warmup: usize,
    pub runs: usize,
    pub workers: usize,
    /// Queries per search call; all at once when `None`.
    pub batch: Option<usize>,
    pub size_override: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: 3,
            runs: 5,
            workers: 1,
            batch: None,
            size_override: None,
        }
    }
}

/// Wall-clock samples of repeated runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub samples: Vec<Duration>,
}

impl Timing {
    pub fn median(&self) -> Duration {
        let mut s = self.samples.clone();
        s.sort_unstable();
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2
        }
    }
}

/// Runs `f` `warmup` times untimed, then `runs` times timed. Returns the
/// last result with the timings.
pub fn time_runs<T>(warmup: usize, runs: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, Timing)> {
    if runs == 0 {
        return Err(Error::Invalid("at least one timed run is needed".into()));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(runs);
    let mut last = None;
    for _ in 0..runs {
        let start = Instant::now();
        let out = f()?;
        samples.push(start.elapsed());
        last = Some(out);
    }
    Ok((last.unwrap(), Timing { samples }))
}

/// Aggregated search over query batches of size `batch`.
pub fn search_batched(
    base: &DenseMatrix,
    queries: &DenseMatrix,
    metric: Metric,
    k: usize,
    plan: &BinPlan,
    workers: usize,
    batch: Option<usize>,
) -> Result<TopKResult> {
    let params = SearchParams {
        recall_target: plan.recall_target,
        aggregate: true,
        size_override: None,
        layout: None,
    };
    let m = queries.rows();
    let size = batch.filter(|&b| b > 0 && b < m);
    let run = |q: &DenseMatrix| -> Result<TopKResult> {
        match search_parallel_with_plan(q, base, metric, k, plan, &params, workers)? {
            SearchOutput::TopK(t) => Ok(t),
            SearchOutput::Candidates(_) => unreachable!("aggregate is set"),
        }
    };
    let Some(size) = size else {
        return run(queries);
    };
    let parts = (0..m)
        .step_by(size)
        .map(|start| {
            let rows: Vec<&[f32]> = (start..(start + size).min(m)).map(|i| queries.row(i)).collect();
            run(&DenseMatrix::from_rows(&rows)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TopKResult::concat(&parts)?)
}

/// For each recall target: plan, warm up, time, and score recall against
/// `truth`. Reported FLOP/s counts only the `2MND` scoring work.
pub fn bench_sweep(
    base: &DenseMatrix,
    queries: &DenseMatrix,
    truth: &Truth,
    metric: Metric,
    k: usize,
    targets: &[f64],
    cfg: &BenchConfig,
) -> Result<Vec<BenchPoint>> {
    if truth.k < k || truth.rows != queries.rows() {
        return Err(Error::Invalid(format!(
            "truth is {}x{}, need {}x(>= {k})",
            truth.rows,
            truth.k,
            queries.rows()
        )));
    }
    let flops = count_flops(queries.rows(), base.rows(), base.cols())? as f64;
    let mut points = Vec::with_capacity(targets.len());
    for &r in targets {
        let plan = plan_bins(base.rows(), k, r, cfg.size_override)?;
        let (result, timing) = time_runs(cfg.warmup, cfg.runs, || {
            search_batched(base, queries, metric, k, &plan, cfg.workers, cfg.batch)
        })?;
        let recall = recall_from_indices(&result.indices, k, &truth.indices, truth.k, queries.rows())?;
        let secs = timing.median().as_secs_f64().max(f64::MIN_POSITIVE);
        points.push(BenchPoint {
            recall_target: r,
            measured_recall: recall.mean,
            qps: queries.rows() as f64 / secs,
            gflops: flops / secs / 1e9,
            l: plan.num_bins,
            w: plan.bin_width_exp,
        });
    }
    Ok(points)
}

pub fn write_bench_csv<W: Write>(out: W, points: &[BenchPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Integer key whose ascending order is
/// [`approxtopk_core::metric::rank_order`]: better values first,
/// equal values (including `-0.0` and `0.0`) by index, NaN last.
pub fn rank_key(value: f32, index: u32, dir: Direction) -> u64 {
    let v = if value == 0.0 { 0.0f32 } else { value };
    let bits = v.to_bits();
    let ordered = if bits >> 31 == 1 { !bits } else { bits | 1 << 31 };
    let key = if value.is_nan() {
        u32::MAX
    } else {
        match dir {
            Direction::Min => ordered,
            Direction::Max => !ordered,
        }
    };
    (key as u64) << 32 | index as u64
}

/// Default cap on the baseline's score matrix.
pub const DEFAULT_MEMORY_GUARD: u64 = 2 << 30;

/// Exact top-k by materializing all `M x N` scores and fully sorting each
/// row: the unfused reference the binned reduction is measured against.
/// Refuses when the score matrix would exceed `guard_bytes`.
pub fn baseline_full_sort(
    q: &DenseMatrix,
    x: &DenseMatrix,
    metric: Metric,
    k: usize,
    workers: usize,
    guard_bytes: u64,
) -> Result<(TopKResult, Duration)> {
    // one cache line of padding keeps rows off the same cache sets
    let stride = x.rows() + 16;
    let needed = 4 * q.rows() as u64 * stride as u64;
    if needed > guard_bytes {
        return Err(Error::MemoryGuard {
            needed,
            limit: guard_bytes,
        });
    }
    if k == 0 || k > x.rows() {
        return Err(Error::Invalid(format!("k = {k} must be in 1..={}", x.rows())));
    }
    let start = Instant::now();
    let prep = prepare(q, x, metric);
    let plan = BinPlan::exact(x.rows(), k);
    let kernel = PartialReduce::new(
        &prep.queries,
        &prep.database,
        metric,
        &plan,
        prep.half_norms.as_deref(),
        None,
    )?;
    let n = x.rows();
    let scores = score_matrix_strided(&kernel, q.rows(), n, stride, workers);
    let dir = metric.direction();
    let mut values = Vec::with_capacity(q.rows() * k);
    let mut indices = Vec::with_capacity(q.rows() * k);
    let mut keys: Vec<u64> = Vec::with_capacity(n);
    for srow in scores.chunks_exact(stride) {
        let srow = &srow[..n];
        keys.clear();
        keys.extend(srow.iter().enumerate().map(|(j, &s)| rank_key(s, j as u32, dir)));
        keys.sort_unstable();
        for &key in &keys[..k] {
            let j = key as u32;
            values.push(srow[j as usize]);
            indices.push(j);
        }
    }
    let elapsed = start.elapsed();
    Ok((
        TopKResult {
            values,
            indices,
            rows: q.rows(),
            k,
            direction: dir,
        },
        elapsed,
    ))
}

pub const ROOFLINE_CSV_HEADER: &str = "name,i_mem,i_cop,attainable_gflops,bound";

/// One `(profile, machine)` cell of a roofline report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RooflineRow {
    pub name: String,
    pub i_mem: f64,
    pub i_cop: f64,
    pub attainable_gflops: f64,
    pub bound: &'static str,
}

pub fn roofline_row(profile: &NamedProfile, hw: &HardwareSpec) -> Result<RooflineRow> {
    let r = diagnose(hw, &profile.profile)?;
    Ok(RooflineRow {
        name: format!("{}@{}", profile.name, hw.name),
        i_mem: r.i_mem,
        i_cop: r.i_cop,
        attainable_gflops: r.attainable / 1e9,
        bound: r.bound.name(),
    })
}

pub fn write_roofline_csv<W: Write>(out: W, rows: &[RooflineRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
