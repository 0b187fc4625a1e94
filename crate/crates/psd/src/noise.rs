//! Seeded randomness and the Laplace mechanism.
//!
//! A count released as `true_count + Lap(1/ε)` is ε-differentially private
//! because a count query has sensitivity 1: adding or removing one tuple
//! changes it by exactly 1. More generally a function with sensitivity σ is
//! released with noise `Lap(σ/ε)`.
//!
//! Reproducibility: every random draw in this crate flows through a
//! [`RandomSource`], which is a ChaCha8 stream keyed by a 64-bit seed. Child
//! streams are derived positionally (`derive(tag)`) from the *seed*, not from
//! the stream state, so the noise assigned to one tree node never shifts when
//! an unrelated part of the tree changes shape.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// SplitMix64 finalizer; the documented seed-mixing function behind
/// [`RandomSource::derive`].
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A seeded, single-owner stream of randomness.
///
/// Two sources constructed with the same seed produce identical sample
/// sequences across runs and platforms. In noiseless mode (a test and
/// ground-truth hook) all privacy noise collapses to zero while plain
/// uniform draws (data synthesis, workload placement) keep working.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    noiseless: bool,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> RandomSource {
        RandomSource { seed, noiseless: false, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// A source whose privacy-noise draws are forced to zero and whose
    /// mechanisms return exact statistics. Used for ground-truth baselines.
    pub fn noiseless(seed: u64) -> RandomSource {
        RandomSource { seed, noiseless: true, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_noiseless(&self) -> bool {
        self.noiseless
    }

    /// Derives an independent child stream: `child_seed =
    /// splitmix64(seed XOR splitmix64(tag))`. Derivation depends only on the
    /// parent seed and the tag, never on how many draws the parent has made.
    pub fn derive(&self, tag: u64) -> RandomSource {
        let child = splitmix64(self.seed ^ splitmix64(tag));
        RandomSource { seed: child, noiseless: self.noiseless, rng: ChaCha8Rng::seed_from_u64(child) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Uniform draw in `(0, 1)`; resamples the (probability 2^-53) zero.
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.uniform() * (hi - lo)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: u64) -> u64 {
        // Multiply-shift; bias is < 2^-64 per draw, irrelevant at our scales.
        ((self.rng.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

/// Parameters of one Laplace release: sensitivity σ(f) and budget ε.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceParams {
    pub sensitivity: f64,
    pub epsilon: f64,
}

impl LaplaceParams {
    pub fn new(sensitivity: f64, epsilon: f64) -> Result<LaplaceParams> {
        if !(sensitivity >= 0.0) || !sensitivity.is_finite() {
            return Err(Error::invalid(format!(
                "sensitivity must be finite and >= 0, got {sensitivity}"
            )));
        }
        if !(epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be > 0, got {epsilon}")));
        }
        Ok(LaplaceParams { sensitivity, epsilon })
    }

    /// The Laplace scale σ/ε. Zero sensitivity (or infinite ε) gives scale 0,
    /// i.e. a noiseless release.
    pub fn scale(&self) -> f64 {
        if self.sensitivity == 0.0 {
            0.0
        } else {
            self.sensitivity / self.epsilon
        }
    }
}

/// One draw from `Lap(scale)` by inverse CDF on a single uniform.
///
/// For `u` uniform on (0,1): `x = scale*ln(2u)` when `u < 1/2`, else
/// `x = -scale*ln(2(1-u))`. Mean 0, variance `2*scale^2`.
pub fn laplace_draw(src: &mut RandomSource, scale: f64) -> f64 {
    if src.is_noiseless() || scale == 0.0 {
        return 0.0;
    }
    let u = src.uniform_open();
    if u < 0.5 {
        scale * (2.0 * u).ln()
    } else {
        -scale * (2.0 * (1.0 - u)).ln()
    }
}

/// A draw from the Laplace mechanism: `Lap(σ(f)/ε)`.
pub fn laplace_sample(src: &mut RandomSource, params: &LaplaceParams) -> f64 {
    laplace_draw(src, params.scale())
}

/// Releases `true_count + Lap(1/ε)`: a sensitivity-1 count query.
///
/// The result is deliberately neither rounded nor clamped to be nonnegative;
/// the least-squares post-processing assumes unbiased inputs.
pub fn noisy_count(src: &mut RandomSource, true_count: u64, epsilon: f64) -> Result<f64> {
    let params = LaplaceParams::new(1.0, epsilon)?;
    Ok(true_count as f64 + laplace_sample(src, &params))
}
