//! Rough host measurements of the three roofline ceilings.
//!
//! Each probe reports the best of a few repetitions. The numbers are
//! empirical ceilings for this implementation on this host, not vendor peaks.

use std::hint::black_box;
use std::thread;
use std::time::Instant;

use approxtopk_core::recall::BinPlan;
use approxtopk_core::roofline::HardwareSpec;
use approxtopk_core::{DenseMatrix, Metric, PartialReduce};

use crate::error::Result;
use crate::parallel::reduce_parallel;
use crate::synth::{gen_synthetic, Distribution};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrateConfig {
    pub workers: usize,
    pub repeats: usize,
    /// Size of the streamed buffer for the bandwidth probe.
    pub stream_bytes: usize,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            repeats: 5,
            stream_bytes: 256 << 20,
        }
    }
}

fn best_rate(repeats: usize, work: f64, mut f: impl FnMut()) -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        f();
        best = best.min(t.elapsed().as_secs_f64());
    }
    work / best.max(1e-12)
}

/// FLOP/s of the scoring kernel on a cache-resident database.
pub fn probe_flops(cfg: &CalibrateConfig) -> Result<f64> {
    let (m, n, d) = (256 * cfg.workers.max(1), 2048, 128);
    let x = gen_synthetic(n, d, Distribution::Gaussian, 11)?;
    let q = gen_synthetic(m, d, Distribution::Gaussian, 12)?;
    let plan = BinPlan::with_width_exp(n, 1, 10)?;
    let kernel = PartialReduce::new(&q, &x, Metric::Mips, &plan, None, None)?;
    reduce_parallel(&kernel, m, cfg.workers);
    Ok(best_rate(cfg.repeats, 2.0 * (m * n * d) as f64, || {
        black_box(reduce_parallel(&kernel, m, cfg.workers));
    }))
}

/// Read bandwidth in bytes/s from summing a buffer far larger than cache.
pub fn probe_bandwidth(cfg: &CalibrateConfig) -> f64 {
    let len = (cfg.stream_bytes / 4).max(1 << 16);
    let buf: Vec<f32> = (0..len).map(|i| (i % 7) as f32).collect();
    let workers = cfg.workers.max(1);
    let chunk = len.div_ceil(workers);
    best_rate(cfg.repeats, (len * 4) as f64, || {
        thread::scope(|s| {
            for part in buf.chunks(chunk) {
                s.spawn(move || {
                    let mut acc = [0.0f32; 16];
                    let mut it = part.chunks_exact(16);
                    for c in &mut it {
                        for (a, v) in acc.iter_mut().zip(c) {
                            *a += v;
                        }
                    }
                    black_box(acc);
                });
            }
        });
    })
}

/// Coefficient-wise ops/s from a running max-and-argmax scan. Each element
/// costs one compare and two selects.
pub fn probe_cops(cfg: &CalibrateConfig) -> f64 {
    const LEN: usize = 1 << 14;
    const PASSES: usize = 2000;
    let data: Vec<f32> = (0..LEN).map(|i| ((i * 7919) % 1009) as f32).collect();
    let workers = cfg.workers.max(1);
    let work = 3.0 * (LEN * PASSES * workers) as f64;
    best_rate(cfg.repeats, work, || {
        thread::scope(|s| {
            for _ in 0..workers {
                let data = &data;
                s.spawn(move || {
                    let mut best = [f32::NEG_INFINITY; 16];
                    let mut arg = [0u32; 16];
                    for pass in 0..PASSES {
                        let data = black_box(data);
                        for (b, c) in data.chunks_exact(16).enumerate() {
                            let idx = (pass * LEN / 16 + b) as u32;
                            for l in 0..16 {
                                let better = c[l] > best[l];
                                best[l] = if better { c[l] } else { best[l] };
                                arg[l] = if better { idx } else { arg[l] };
                            }
                        }
                    }
                    black_box((best, arg));
                });
            }
        });
    })
}

/// Runs all three probes.
pub fn calibrate(name: &str, cfg: &CalibrateConfig) -> Result<HardwareSpec> {
    let pi = probe_flops(cfg)?;
    let beta = probe_bandwidth(cfg);
    let gamma = probe_cops(cfg);
    Ok(HardwareSpec::new(name, pi, beta, gamma)?)
}

/// Dataset helper for the bound-consistency check: the rate of one full
/// search pass at the given plan.
pub fn measure_search_flops(
    q: &DenseMatrix,
    x: &DenseMatrix,
    plan: &BinPlan,
    workers: usize,
    repeats: usize,
) -> Result<f64> {
    let kernel = PartialReduce::new(q, x, Metric::Mips, plan, None, None)?;
    Ok(best_rate(repeats, 2.0 * (q.rows() * x.rows() * x.cols()) as f64, || {
        black_box(reduce_parallel(&kernel, q.rows(), workers));
    }))
}
