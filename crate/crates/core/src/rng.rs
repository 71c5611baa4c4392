//! Deterministic random streams and the two samplers the noise model needs.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Counter-based generator (ChaCha8). A `(seed, stream)` pair fully
/// determines the sample sequence on every platform.
///
/// Not meant to be shared between threads: hand each worker its own
/// [`SeededRng::fork`].
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream. Forking does not advance `self`, so the
    /// children of a generator depend only on its seed, stream and `child`.
    pub fn fork(&self, child: u64) -> SeededRng {
        let stream = splitmix64(self.stream ^ splitmix64(child.wrapping_add(0x9e37_79b9)));
        SeededRng::with_stream(self.seed, stream)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `n` i.i.d. draws from `N(mean, std²)`.
pub fn sample_gaussian(rng: &mut SeededRng, n: usize, mean: f64, std: f64) -> Result<Vec<f64>> {
    if !(std >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "standard deviation must be non-negative, got {std}"
        )));
    }
    if std == 0.0 {
        return Ok(vec![mean; n]);
    }
    Ok((0..n).map(|_| mean + std * rng.standard_normal()).collect())
}

/// Exact Poisson draw: sequential inversion below rate 30, Hörmann's
/// transformed rejection with squeeze (PTRS) above.
pub fn sample_poisson(rng: &mut SeededRng, rate: f64) -> Result<u64> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "Poisson rate must be finite and non-negative, got {rate}"
        )));
    }
    if rate == 0.0 {
        return Ok(0);
    }
    if rate < 30.0 {
        Ok(poisson_inversion(rng, rate))
    } else {
        Ok(poisson_ptrs(rng, rate))
    }
}

fn poisson_inversion(rng: &mut SeededRng, rate: f64) -> u64 {
    let u = rng.uniform();
    let mut k = 0u64;
    let mut p = (-rate).exp();
    let mut cdf = p;
    // The tail beyond ~rate + 40·sqrt(rate) has probability below f64 resolution.
    while u > cdf && p > 0.0 {
        k += 1;
        p *= rate / k as f64;
        cdf += p;
    }
    k
}

fn poisson_ptrs(rng: &mut SeededRng, rate: f64) -> u64 {
    let smu = rate.sqrt();
    let b = 0.931 + 2.53 * smu;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    let log_rate = rate.ln();
    loop {
        let u = rng.uniform() - 0.5;
        let v = rng.uniform();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + rate + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -rate + k * log_rate - libm::lgamma(k + 1.0);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn gaussian_moments_at_one_million() {
        let mut rng = SeededRng::new(7);
        let xs = sample_gaussian(&mut rng, 1_000_000, 0.0, 1.0).unwrap();
        let (m, v) = moments(&xs);
        assert!(m.abs() < 0.005, "mean {m}");
        assert!((v - 1.0).abs() < 0.01, "var {v}");
    }

    #[test]
    fn gaussian_zero_std_is_constant() {
        let mut rng = SeededRng::new(1);
        let xs = sample_gaussian(&mut rng, 100, 0.3, 0.0).unwrap();
        assert!(xs.iter().all(|&x| x == 0.3));
        assert!(sample_gaussian(&mut rng, 1, 0.0, -1.0).is_err());
    }

    #[test]
    fn same_seed_same_stream() {
        let a = sample_gaussian(&mut SeededRng::new(42), 64, 0.0, 1.0).unwrap();
        let b = sample_gaussian(&mut SeededRng::new(42), 64, 0.0, 1.0).unwrap();
        assert_eq!(a, b);
        let mut r1 = SeededRng::new(3);
        let mut r2 = SeededRng::new(3);
        let p1: Vec<_> = (0..200).map(|_| sample_poisson(&mut r1, 45.0).unwrap()).collect();
        let p2: Vec<_> = (0..200).map(|_| sample_poisson(&mut r2, 45.0).unwrap()).collect();
        assert_eq!(p1, p2);
    }

    #[test]
    fn forks_differ_from_parent_and_each_other() {
        let parent = SeededRng::new(9);
        let mut a = parent.fork(0);
        let mut b = parent.fork(1);
        let mut p = parent.clone();
        let (x, y, z) = (a.next_u64(), b.next_u64(), p.next_u64());
        assert!(x != y && x != z && y != z);
        assert_eq!(parent.fork(1).next_u64(), y);
    }

    #[test]
    fn poisson_zero_rate_and_errors() {
        let mut rng = SeededRng::new(0);
        assert_eq!(sample_poisson(&mut rng, 0.0).unwrap(), 0);
        assert!(sample_poisson(&mut rng, -0.5).is_err());
        assert!(sample_poisson(&mut rng, f64::NAN).is_err());
    }

    #[test]
    fn poisson_moments_rate_four() {
        let mut rng = SeededRng::new(11);
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| sample_poisson(&mut rng, 4.0).unwrap() as f64)
            .collect();
        let (m, v) = moments(&xs);
        assert!((m - 4.0).abs() < 0.02, "mean {m}");
        assert!((v - 4.0).abs() < 0.05, "var {v}");
    }

    #[test]
    fn poisson_moments_large_rate() {
        let mut rng = SeededRng::new(12);
        for &rate in &[30.0, 100.0, 1234.5] {
            let xs: Vec<f64> = (0..200_000)
                .map(|_| sample_poisson(&mut rng, rate).unwrap() as f64)
                .collect();
            let (m, v) = moments(&xs);
            let se = (rate / xs.len() as f64).sqrt();
            assert!((m - rate).abs() < 4.0 * se, "rate {rate}: mean {m}");
            assert!((v / rate - 1.0).abs() < 0.02, "rate {rate}: var {v}");
        }
    }
}
