//! Seeded random number generation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Deterministic generator: the same seed yields the same draws on every run.
///
/// Not shareable across threads; derive one per worker with [`SeededRng::fork`].
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of keys into one seed. Order matters.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix64(seed), |acc, &k| mix64(acc ^ mix64(k)))
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream keyed by `stream`; does not advance `self`.
    pub fn fork(&self, stream: u64) -> SeededRng {
        SeededRng::new(derive_seed(self.seed, &[stream]))
    }

    pub fn normal<T: Scalar>(&mut self, shape: &[usize], mean: f64, stddev: f64) -> Result<Tensor<T>> {
        if !(stddev >= 0.0) || !mean.is_finite() || !stddev.is_finite() {
            return Err(Error::invalid(format!("normal: stddev {stddev} must be >= 0")));
        }
        let len: usize = Tensor::<T>::zeros(shape)?.len();
        let data = (0..len)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.inner);
                T::lit(mean + stddev * z)
            })
            .collect();
        Tensor::from_vec(shape, data)
    }

    pub fn gaussian(&mut self, mean: f64, stddev: f64) -> f64 {
        Normal::new(mean, stddev)
            .expect("finite stddev")
            .sample(&mut self.inner)
    }

    pub fn uniform<T: Scalar>(&mut self, shape: &[usize], low: f64, high: f64) -> Result<Tensor<T>> {
        if !(low < high) {
            return Err(Error::invalid(format!("uniform: empty range [{low}, {high})")));
        }
        let len: usize = Tensor::<T>::zeros(shape)?.len();
        let data = (0..len).map(|_| T::lit(self.inner.random_range(low..high))).collect();
        Tensor::from_vec(shape, data)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random()
    }

    /// Uniform integer in `[low, high]`.
    pub fn int_inclusive(&mut self, low: i64, high: i64) -> i64 {
        self.inner.random_range(low..=high)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_stddev_gives_the_mean() {
        let mut rng = SeededRng::new(1);
        let t: Tensor<f32> = rng.normal(&[5, 3], 2.5, 0.0).unwrap();
        assert!(t.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn negative_stddev_rejected() {
        let mut rng = SeededRng::new(1);
        assert!(rng.normal::<f32>(&[2], 0.0, -1.0).is_err());
    }

    #[test]
    fn same_seed_same_draws() {
        let a: Tensor<f32> = SeededRng::new(42).normal(&[64], 0.0, 1.0).unwrap();
        let b: Tensor<f32> = SeededRng::new(42).normal(&[64], 0.0, 1.0).unwrap();
        assert_eq!(a, b);
        let c: Tensor<f32> = SeededRng::new(43).normal(&[64], 0.0, 1.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn law_of_large_numbers() {
        let t: Tensor<f64> = SeededRng::new(7).normal(&[100_000], 0.0, 1.0).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "stddev {}", var.sqrt());
    }

    #[test]
    fn forks_are_independent_and_stable() {
        let root = SeededRng::new(9);
        let mut a = root.fork(1);
        let mut b = root.fork(1);
        let mut c = root.fork(2);
        let (x, y, z) = (a.unit(), b.unit(), c.unit());
        assert_eq!(x, y);
        assert_ne!(x, z);
    }
}
