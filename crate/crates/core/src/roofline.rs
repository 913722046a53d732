//! Roofline model extended with a coefficient-wise instruction ceiling.
//!
//! Attainable throughput is `min(pi, beta * I_MEM, gamma * I_COP)`, where
//! `I_MEM` is FLOPs per byte moved and `I_COP` is FLOPs per coefficient-wise
//! (non-matmul) operation. A top-k kernel that spends too many compares and
//! selects per dot product hits the `gamma` wall before the `pi` one.

use alloc::string::String;

use crate::error::{Error, Result};
use crate::metric::Metric;

/// Peak rates of a machine, in base units (FLOP/s, bytes/s, COP/s).
#[derive(Debug, Clone, PartialEq)]
pub struct HardwareSpec {
    pub name: String,
    pub pi: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl HardwareSpec {
    pub fn new(name: impl Into<String>, pi: f64, beta: f64, gamma: f64) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            pi,
            beta,
            gamma,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// From the customary units: TFLOP/s, GB/s, TCOP/s.
    pub fn from_units(name: impl Into<String>, pi_tflops: f64, beta_gbps: f64, gamma_tcops: f64) -> Result<Self> {
        Self::new(name, pi_tflops * 1e12, beta_gbps * 1e9, gamma_tcops * 1e12)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, v) in [("pi", self.pi), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(alloc::format!("{what} must be positive and finite")));
            }
        }
        Ok(())
    }

    pub fn gpu_v100() -> Self {
        Self::from_units("GPU V100", 125.0, 900.0, 15.7).unwrap()
    }

    pub fn gpu_a100() -> Self {
        Self::from_units("GPU A100", 312.0, 1555.0, 19.5).unwrap()
    }

    pub fn tpu_v3() -> Self {
        Self::from_units("TPU V3", 126.0, 858.0, 4.0).unwrap()
    }

    pub fn tpu_v4() -> Self {
        Self::from_units("TPU V4", 274.0, 1144.0, 4.3).unwrap()
    }

    /// The four reference accelerators.
    pub fn reference_machines() -> [Self; 4] {
        [Self::gpu_v100(), Self::gpu_a100(), Self::tpu_v3(), Self::tpu_v4()]
    }
}

/// Which ceiling limits a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bound {
    FlopPeak,
    MemoryBandwidth,
    CopBandwidth,
}

impl Bound {
    pub fn name(self) -> &'static str {
        match self {
            Bound::FlopPeak => "flop_peak",
            Bound::MemoryBandwidth => "memory_bandwidth",
            Bound::CopBandwidth => "cop_bandwidth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attainable {
    pub attainable: f64,
    pub bound: Bound,
}

/// `min(pi, beta * i_mem, gamma * i_cop)`; ties resolve to the earlier of
/// FlopPeak, MemoryBandwidth, CopBandwidth. Infinite intensities are fine.
pub fn attainable_performance(hw: &HardwareSpec, i_mem: f64, i_cop: f64) -> Attainable {
    let mut best = Attainable {
        attainable: hw.pi,
        bound: Bound::FlopPeak,
    };
    for (v, bound) in [
        (hw.beta * i_mem, Bound::MemoryBandwidth),
        (hw.gamma * i_cop, Bound::CopBandwidth),
    ] {
        if v < best.attainable {
            best = Attainable { attainable: v, bound };
        }
    }
    best
}

/// Matrix-multiply intensity `2mnd / (4(mn + md + nd))`: output plus both
/// inputs moved once. Approaches `d/2` for `m, n >> d`.
pub fn blas3_intensity(m: usize, n: usize, d: usize) -> f64 {
    let (m, n, d) = (m as f64, n as f64, d as f64);
    2.0 * m * n * d / (4.0 * (m * n + m * d + n * d))
}

/// Bytes moved by the fused reduction: queries once, the database once per
/// query block, and values plus indices of the `m x l` output once.
pub fn partial_reduce_bytes(m: usize, n: usize, d: usize, l: usize, ib: usize) -> f64 {
    let (m, n, d, l, ib) = (m as f64, n as f64, d as f64, l as f64, ib as f64);
    4.0 * (m * d + m * n * d / ib + 2.0 * m * l)
}

/// `2mnd / (4(md + mnd/ib + 2ml))`.
pub fn partial_reduce_mem_intensity(m: usize, n: usize, d: usize, l: usize, ib: usize) -> f64 {
    2.0 * m as f64 * n as f64 * d as f64 / partial_reduce_bytes(m, n, d, l, ib)
}

/// Byte count obtained by walking the blocked loop nest: each query block
/// loads its queries, streams the whole database and stores its outputs.
/// Equals [`partial_reduce_bytes`] whenever `ib` divides `m`.
pub fn simulate_partial_reduce_bytes(m: usize, n: usize, d: usize, l: usize, ib: usize) -> u128 {
    let ib = ib.max(1);
    let mut bytes: u128 = 0;
    let mut start = 0;
    while start < m {
        let rows = ib.min(m - start) as u128;
        bytes += 4 * rows * d as u128;
        bytes += 4 * n as u128 * d as u128;
        bytes += 2 * 4 * rows * l as u128;
        start += ib;
    }
    bytes
}

/// Largest query block whose queries and bin accumulators fit in
/// `on_chip_bytes` next to one `db_block`-row database tile. Fewer passes
/// over the database means fewer bytes, so the largest fitting block wins.
pub fn select_query_block(m: usize, d: usize, l: usize, db_block: usize, on_chip_bytes: usize) -> usize {
    let tile = 4 * db_block * d;
    let per_query = 4 * d + 8 * l;
    (on_chip_bytes.saturating_sub(tile) / per_query.max(1)).clamp(1, m.max(1))
}

/// `2d / c`.
pub fn cop_intensity(d: usize, c: usize) -> Result<f64> {
    if c == 0 {
        return Err(Error::invalid("COPs per dot product must be at least 1"));
    }
    Ok(2.0 * d as f64 / c as f64)
}

/// Largest COP count per dot product that keeps `gamma * I_COP >= pi`:
/// `floor(2 d gamma / pi)`.
pub fn cop_budget(d: usize, hw: &HardwareSpec) -> usize {
    let x = 2.0 * d as f64 * hw.gamma / hw.pi;
    // absorb rounding in exact quotients such as 256 * 19.5 / 312 = 16
    libm::floor(x + 1e-9 * x) as usize
}

/// Hardware alignment of the reduction dimension; other sizes cost a
/// masking COP.
pub const LANE_ALIGN: usize = 128;

/// COPs per dot product of the fused kernel: compare and two selects, one
/// mask when `d` is not a multiple of [`LANE_ALIGN`], one mask when `n` is
/// not a power of two, and for Euclidean the relaxed-distance subtraction
/// plus the half-norm broadcast.
pub fn count_cops(metric: Metric, d: usize, n: usize) -> usize {
    let mut c = 3;
    if !d.is_multiple_of(LANE_ALIGN) {
        c += 1;
    }
    if !n.is_power_of_two() {
        c += 1;
    }
    if metric == Metric::Euclidean {
        c += 2;
    }
    c
}

/// Problem and blocking parameters of one kernel invocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelProfile {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub l: usize,
    pub ib: usize,
    /// COPs per dot product.
    pub c: usize,
    /// Fraction of the database scored.
    pub lambda: f64,
}

impl KernelProfile {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.d == 0 || self.l == 0 || self.ib == 0 || self.c == 0 {
            return Err(Error::invalid("profile sizes must be positive"));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::invalid("lambda must be in (0, 1]"));
        }
        Ok(())
    }

    /// `lambda * 2mnd`.
    pub fn flops(&self) -> f64 {
        self.lambda * 2.0 * self.m as f64 * self.n as f64 * self.d as f64
    }

    pub fn bytes(&self) -> f64 {
        partial_reduce_bytes(self.m, self.n, self.d, self.l, self.ib)
    }

    /// `c * m * n`.
    pub fn cops(&self) -> f64 {
        self.c as f64 * self.m as f64 * self.n as f64
    }

    pub fn i_mem(&self) -> f64 {
        partial_reduce_mem_intensity(self.m, self.n, self.d, self.l, self.ib)
    }

    pub fn i_cop(&self) -> f64 {
        2.0 * self.d as f64 / self.c as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RooflineReport {
    pub attainable: f64,
    pub bound: Bound,
    pub i_mem: f64,
    pub i_cop: f64,
    /// `flops / attainable`; auxiliary work is not modeled.
    pub runtime_lower_bound: f64,
}

impl RooflineReport {
    /// Measured time beyond the modeled lower bound, i.e. the auxiliary term
    /// the model leaves out.
    pub fn unmodeled_residual(&self, measured_seconds: f64) -> f64 {
        measured_seconds - self.runtime_lower_bound
    }

    /// Whether a measured rate is consistent with the bound.
    pub fn admits(&self, measured_flops_per_sec: f64) -> bool {
        measured_flops_per_sec <= self.attainable
    }
}

pub fn diagnose(hw: &HardwareSpec, profile: &KernelProfile) -> Result<RooflineReport> {
    hw.validate()?;
    profile.validate()?;
    let i_mem = profile.i_mem();
    let i_cop = profile.i_cop();
    let Attainable { attainable, bound } = attainable_performance(hw, i_mem, i_cop);
    Ok(RooflineReport {
        attainable,
        bound,
        i_mem,
        i_cop,
        runtime_lower_bound: profile.flops() / attainable,
    })
}
