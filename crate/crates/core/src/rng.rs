//! Seeded random stream shared by every synthetic fixture.
//!
//! The generator is PCG-XSL-RR 128/64 (`rand_pcg::Pcg64`), seeded with
//! `SeedableRng::seed_from_u64`. All samples are derived from its raw `u64`
//! output with the following fixed mapping so that fixtures can be reproduced
//! by any implementation of the same generator:
//!
//! * uniform on `[0, 1)`: `(u >> 11) * 2^-53`
//! * standard normal: Box-Muller on two uniforms `u1, u2`, with `u1` replaced by
//!   `1 - u1` so the logarithm argument lies in `(0, 1]`; the cosine branch is
//!   returned first and the sine branch is cached for the next call
//! * integer in `[0, n)`: `floor(uniform * n)`
//! * gamma with integer shape `k` and unit mean: `-(1/k) * sum(ln(1 - u_i))`
//!   over `k` uniforms
//!
//! Independent sub-streams are obtained with [`SarRng::substream`], which mixes a
//! tag into the parent seed with SplitMix64.

use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64;

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Clone, Debug)]
pub struct SarRng {
    seed: u64,
    inner: Pcg64,
    spare_normal: Option<f64>,
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SarRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Pcg64::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// A new stream whose seed depends only on this stream's seed and `tag`.
    pub fn substream(&self, tag: u64) -> Self {
        Self::new(splitmix64(self.seed ^ splitmix64(tag)))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n.saturating_sub(1))
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Unit-mean gamma variate with integer shape.
    pub fn gamma_unit_mean(&mut self, shape: u32) -> f64 {
        let k = shape.max(1);
        let mut acc = 0.0;
        for _ in 0..k {
            acc -= (1.0 - self.uniform()).ln();
        }
        acc / k as f64
    }

    /// Fisher-Yates shuffle driven by [`SarRng::below`].
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
