//! Birthday-problem recall model for binned top-k reduction.
//!
//! The true top-k rows land in `l` bins; a top-k row survives the per-bin
//! reduction for sure only when no other top-k row shares its bin. With rows
//! spread uniformly the expected surviving fraction is `((l-1)/l)^(k-1)`.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Bin width `2^bin_width_exp` and bin count chosen for a recall target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinPlan {
    pub bin_width_exp: u32,
    pub num_bins: usize,
    pub database_size: usize,
    pub k: usize,
    pub recall_target: f64,
}

impl BinPlan {
    /// Plan with one row per bin: the reduction is the identity and the
    /// search is exact.
    pub fn exact(n: usize, k: usize) -> Self {
        Self {
            bin_width_exp: 0,
            num_bins: n,
            database_size: n,
            k,
            recall_target: 1.0,
        }
    }

    /// Plan for an explicit bin width, bypassing the recall model.
    pub fn with_width_exp(n: usize, k: usize, bin_width_exp: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("database must not be empty"));
        }
        if bin_width_exp >= usize::BITS {
            return Err(Error::invalid("bin width exponent too large"));
        }
        let num_bins = n.div_ceil(1usize << bin_width_exp);
        Ok(Self {
            bin_width_exp,
            num_bins,
            database_size: n,
            k,
            recall_target: if num_bins == n { 1.0 } else { expected_recall(k, num_bins)? },
        })
    }

    #[inline]
    pub fn bin_size(&self) -> usize {
        1 << self.bin_width_exp
    }

    #[inline]
    pub fn is_exact(&self) -> bool {
        self.bin_width_exp == 0
    }

    /// Model recall of this plan; 1 in exact mode.
    pub fn expected_recall(&self) -> f64 {
        if self.is_exact() {
            1.0
        } else {
            expected_recall(self.k, self.num_bins).unwrap_or(0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallEstimate {
    /// Estimated recall, `z_mean / k`.
    pub expected: f64,
    /// Mean number of top-k items alone in their bin.
    pub z_mean: f64,
}

/// `((l-1)/l)^(k-1)`: expected fraction of the top-k that no other top-k item
/// collides with when `k` items fall uniformly into `l` bins.
pub fn expected_recall(k: usize, l: usize) -> Result<f64> {
    if k == 0 || l == 0 {
        return Err(Error::invalid("expected_recall needs k >= 1 and l >= 1"));
    }
    if k == 1 {
        return Ok(1.0);
    }
    let base = (l - 1) as f64 / l as f64;
    Ok(libm::pow(base, (k - 1) as f64))
}

fn check_target(k: usize, r: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if r.is_nan() || r <= 0.0 {
        return Err(Error::invalid("recall target must be in (0, 1)"));
    }
    if r >= 1.0 {
        return Err(Error::invalid(
            "recall target 1 has no finite bin count; request exact mode instead",
        ));
    }
    Ok(())
}

/// Smallest `l` with `expected_recall(k, l) >= r`.
pub fn min_bins(k: usize, r: f64) -> Result<usize> {
    check_target(k, r)?;
    if k == 1 {
        return Ok(1);
    }
    // 1 - r^(1/(k-1)) without cancellation
    let gap = -libm::expm1(libm::log(r) / (k - 1) as f64);
    let guess = libm::ceil(1.0 / gap);
    if guess.is_nan() || guess >= usize::MAX as f64 {
        return Err(Error::invalid("recall target too close to 1"));
    }
    // The closed form can be off by one under rounding; settle on the exact
    // boundary of the evaluated model.
    let mut l = (guess as usize).max(1);
    while l > 1 && expected_recall(k, l - 1)? >= r {
        l -= 1;
    }
    while expected_recall(k, l)? < r {
        l += 1;
    }
    Ok(l)
}

/// First-order approximation `ceil((k-1)/(1-r))`, an upper bound on
/// [`min_bins`] for the targets of interest.
pub fn approx_min_bins(k: usize, r: f64) -> Result<usize> {
    check_target(k, r)?;
    if k == 1 {
        return Ok(1);
    }
    let x = (k - 1) as f64 / (1.0 - r);
    // 9 / (1 - 0.95) evaluates to 179.99999999999997
    let rounded = libm::round(x);
    let x = if libm::fabs(x - rounded) <= 1e-9 * x { rounded } else { x };
    Ok((libm::ceil(x) as usize).max(1))
}

/// Chooses the bin width for a database of `n` rows.
///
/// With `r = 1` the plan is exact. Otherwise the widest power-of-two bin is
/// taken whose bin count over the effective size (`size_override` when
/// positive, else `n`) still reaches [`min_bins`]. An effective size below
/// `min_bins` falls back to exact mode. The bin count over the actual `n`
/// never drops below `k`.
pub fn plan_bins(n: usize, k: usize, r: f64, size_override: Option<usize>) -> Result<BinPlan> {
    if n == 0 || k == 0 {
        return Err(Error::invalid("plan_bins needs n >= 1 and k >= 1"));
    }
    if k > n {
        return Err(Error::invalid(alloc::format!(
            "k = {k} exceeds the database size {n}"
        )));
    }
    if r.is_nan() || r <= 0.0 || r > 1.0 {
        return Err(Error::invalid("recall target must be in (0, 1]"));
    }
    if r == 1.0 {
        return Ok(BinPlan::exact(n, k));
    }
    let n_eff = size_override.filter(|&s| s > 0).unwrap_or(n);
    let needed = min_bins(k, r)?;
    if n_eff < needed {
        return Ok(BinPlan {
            recall_target: r,
            ..BinPlan::exact(n, k)
        });
    }
    // Past ceil(log2(n_eff)) every width yields a single bin.
    let max_w = n_eff.next_power_of_two().trailing_zeros();
    let mut w = (0..=max_w)
        .rev()
        .find(|&w| n_eff.div_ceil(1usize << w) >= needed)
        .unwrap_or(0);
    while w > 0 && n.div_ceil(1usize << w) < k {
        w -= 1;
    }
    Ok(BinPlan {
        bin_width_exp: w,
        num_bins: n.div_ceil(1usize << w),
        database_size: n,
        k,
        recall_target: r,
    })
}

/// Monte Carlo estimate of the balls-into-bins recall: per trial, `k` balls
/// go independently and uniformly into `l` bins and the balls alone in their
/// bin are counted. Deterministic for a given seed.
pub fn simulate_recall(k: usize, l: usize, trials: usize, seed: u64) -> Result<RecallEstimate> {
    if k == 0 || l == 0 || trials == 0 {
        return Err(Error::invalid("simulate_recall needs k, l and trials >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bins: Vec<usize> = Vec::with_capacity(k);
    let mut total: u64 = 0;
    for _ in 0..trials {
        bins.clear();
        bins.extend((0..k).map(|_| rng.random_range(0..l)));
        bins.sort_unstable();
        total += count_singletons(&bins);
    }
    let z_mean = total as f64 / trials as f64;
    Ok(RecallEstimate {
        expected: z_mean / k as f64,
        z_mean,
    })
}

fn count_singletons(sorted: &[usize]) -> u64 {
    let mut alone = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if j - i == 1 {
            alone += 1;
        }
        i = j;
    }
    alone
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_recall_examples() {
        assert_eq!(expected_recall(1, 7).unwrap(), 1.0);
        assert_eq!(expected_recall(10, 1).unwrap(), 0.0);
        assert!((expected_recall(10, 100).unwrap() - 0.913_517).abs() < 1e-6);
        assert!(expected_recall(0, 3).is_err());
        assert!(expected_recall(3, 0).is_err());
    }

    #[test]
    fn min_bins_examples() {
        assert_eq!(min_bins(1, 0.99).unwrap(), 1);
        assert_eq!(min_bins(10, 0.95).unwrap(), 176);
        assert_eq!(min_bins(10, 0.5).unwrap(), 14);
        assert!(expected_recall(10, 13).unwrap() < 0.5);
        assert!(expected_recall(10, 14).unwrap() >= 0.5);
        assert!(min_bins(10, 1.0).is_err());
        assert!(min_bins(10, 0.0).is_err());
        assert!(min_bins(10, -0.5).is_err());
        assert!(min_bins(10, f64::NAN).is_err());
    }

    #[test]
    fn approx_min_bins_examples() {
        assert_eq!(approx_min_bins(10, 0.95).unwrap(), 180);
        assert_eq!(approx_min_bins(2, 0.5).unwrap(), 2);
        assert_eq!(approx_min_bins(1, 0.9).unwrap(), 1);
        assert!(approx_min_bins(10, 1.0).is_err());
    }

    #[test]
    fn plan_examples() {
        let p = plan_bins(1_000_000, 10, 0.95, None).unwrap();
        assert_eq!((p.bin_width_exp, p.num_bins), (12, 245));

        let p = plan_bins(100, 10, 0.99, None).unwrap();
        assert_eq!((p.bin_width_exp, p.num_bins), (0, 100));

        let p = plan_bins(8, 1, 0.5, None).unwrap();
        assert_eq!((p.bin_width_exp, p.num_bins), (3, 1));

        let p = plan_bins(1000, 10, 1.0, None).unwrap();
        assert!(p.is_exact());
        assert_eq!(p.num_bins, 1000);

        assert!(plan_bins(5, 6, 0.9, None).is_err());
        assert!(plan_bins(5, 2, 0.0, None).is_err());
        assert!(plan_bins(5, 2, 1.5, None).is_err());
    }

    #[test]
    fn size_override_drives_the_width() {
        // a shard of 2^16 rows planned as part of a 2^22-row database
        let local = plan_bins(1 << 16, 10, 0.95, None).unwrap();
        let global = plan_bins(1 << 16, 10, 0.95, Some(1 << 22)).unwrap();
        assert!(global.bin_width_exp > local.bin_width_exp);
        assert_eq!(global.num_bins, (1usize << 16) >> global.bin_width_exp);
        assert!(global.num_bins >= 10);
        // zero override is ignored
        assert_eq!(plan_bins(1 << 16, 10, 0.95, Some(0)).unwrap(), local);
    }

    #[test]
    fn simulate_trivial_cases() {
        assert_eq!(simulate_recall(1, 7, 100, 3).unwrap().expected, 1.0);
        assert_eq!(simulate_recall(10, 1, 100, 3).unwrap().expected, 0.0);
        let a = simulate_recall(10, 50, 1000, 9).unwrap();
        let b = simulate_recall(10, 50, 1000, 9).unwrap();
        assert_eq!(a, b);
        assert!((a.z_mean / 10.0 - a.expected).abs() < 1e-12);
    }

    #[test]
    fn singletons() {
        assert_eq!(count_singletons(&[1, 1, 2, 3, 3, 3, 4]), 2);
        assert_eq!(count_singletons(&[]), 0);
    }
}
