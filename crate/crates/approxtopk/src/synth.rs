//! Seeded synthetic datasets.

use std::str::FromStr;

use approxtopk_core::DenseMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    /// iid standard normal coordinates.
    Gaussian,
    /// Gaussian rows scaled to unit length (uniform on the sphere).
    UniformSphere,
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Distribution::Gaussian),
            "uniform_sphere" | "sphere" => Ok(Distribution::UniformSphere),
            other => Err(Error::Invalid(format!("unknown distribution `{other}`"))),
        }
    }
}

pub fn gen_synthetic(n: usize, d: usize, dist: Distribution, seed: u64) -> Result<DenseMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let m = DenseMatrix::new(n, d, data)?;
    Ok(match dist {
        Distribution::Gaussian => m,
        Distribution::UniformSphere => m.normalized(),
    })
}

/// Seeded permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = gen_synthetic(50, 8, Distribution::Gaussian, 1).unwrap();
        assert_eq!(a, gen_synthetic(50, 8, Distribution::Gaussian, 1).unwrap());
        assert_ne!(a, gen_synthetic(50, 8, Distribution::Gaussian, 2).unwrap());
    }

    #[test]
    fn sphere_rows_are_unit() {
        let m = gen_synthetic(200, 17, Distribution::UniformSphere, 3).unwrap();
        for row in m.iter_rows() {
            let norm = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gaussian_means_are_centered() {
        let (n, d) = (100_000, 64);
        let m = gen_synthetic(n, d, Distribution::Gaussian, 4).unwrap();
        let mut sums = vec![0.0f64; d];
        for row in m.iter_rows() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += *v as f64;
            }
        }
        // 3 / sqrt(n) is about 0.0095
        for s in sums {
            assert!((s / n as f64).abs() < 0.02);
        }
    }

    #[test]
    fn permutation_is_a_bijection() {
        let mut p = permutation(1000, 9);
        assert_eq!(p, permutation(1000, 9));
        p.sort_unstable();
        assert!(p.iter().enumerate().all(|(i, &v)| i == v));
    }
}
