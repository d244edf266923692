//! Seeded, platform-independent random streams.
//!
//! Poisson variates use inversion below `POISSON_INVERSION_LIMIT` and
//! Hörmann's transformed rejection with squeeze (PTRS) above it. The choice is
//! fixed so noisy sinograms are bit-reproducible from a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const POISSON_INVERSION_LIMIT: f64 = 30.0;

/// Stage tags mixed into a base seed to derive independent streams.
pub mod tags {
    pub const NOISE: u64 = 0x4e4f_4953_4500_0001;
    pub const INIT: u64 = 0x494e_4954_0000_0002;
    pub const BANKS: u64 = 0x4241_4e4b_5300_0003;
    pub const PAIRS: u64 = 0x5041_4952_5300_0004;
    pub const EXPERIMENT: u64 = 0x4558_5045_5200_0005;
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh stream seeded with `seed ^ tag`.
    pub fn derive(&self, tag: u64) -> Self {
        Self::new(self.seed ^ tag)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Poisson variate with mean `lambda`, returned as f64 so very large
    /// means stay exact in the integer range of f64.
    pub fn poisson(&mut self, lambda: f64) -> f64 {
        debug_assert!(lambda >= 0.0 && lambda.is_finite());
        if lambda == 0.0 {
            0.0
        } else if lambda < POISSON_INVERSION_LIMIT {
            self.poisson_inversion(lambda)
        } else {
            self.poisson_ptrs(lambda)
        }
    }

    fn poisson_inversion(&mut self, lambda: f64) -> f64 {
        let u = self.uniform();
        let mut k = 0.0;
        let mut p = (-lambda).exp();
        let mut cdf = p;
        // The tail beyond ~lambda + 40 sqrt(lambda) + 40 carries no f64 mass.
        while u > cdf && k < 1000.0 {
            k += 1.0;
            p *= lambda / k;
            cdf += p;
        }
        k
    }

    fn poisson_ptrs(&mut self, lambda: f64) -> f64 {
        let slam = lambda.sqrt();
        let loglam = lambda.ln();
        let b = 0.931 + 2.53 * slam;
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let vr = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = self.uniform() - 0.5;
            let v = self.uniform();
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
            if us >= 0.07 && v <= vr {
                return k;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
                <= -lambda + k * loglam - ln_factorial(k)
            {
                return k;
            }
        }
    }
}

/// ln(k!) for a non-negative integer-valued `k`.
pub(crate) fn ln_factorial(k: f64) -> f64 {
    if k < 10.0 {
        let mut acc = 1.0f64;
        let mut i = 2.0;
        while i <= k {
            acc *= i;
            i += 1.0;
        }
        acc.ln()
    } else {
        // Stirling series with three correction terms.
        let x = k + 1.0;
        let inv = 1.0 / x;
        let inv2 = inv * inv;
        (x - 0.5) * x.ln() - x
            + 0.5 * (2.0 * std::f64::consts::PI).ln()
            + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
    }
}
