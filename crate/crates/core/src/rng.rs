//! Deterministic counter-based random streams.
//!
//! Every random quantity in this crate is a pure function of a base seed, a
//! stack of stream labels (trial, step, purpose, lane), and a draw counter.
//! That buys two properties the samplers and the experiment harness rely on:
//!
//! * reruns with the same seed and labels reproduce every draw bit-for-bit,
//!   regardless of thread scheduling or call order elsewhere;
//! * the noise attached to pool candidate `i` depends only on `i` (via
//!   [`RngState::uniform_at`]), so two policies fed the same state see the
//!   identical noise vector even if they walk the pool differently.
//!
//! Values are produced with the splitmix64 finalizer over the counter
//! sequence `key + i * PHI`, i.e. each labeled stream is a splitmix64
//! sequence starting at a key derived by absorbing the labels. Labels are
//! absorbed tag-first so `with_trial(3)` and `with_step(3)` land in
//! unrelated streams.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2^64 / golden ratio; the splitmix64 counter increment.
const PHI: u64 = 0x9e37_79b9_7f4a_7c15;

const TAG_ROOT: u64 = 0x7374_6f63_6861_6371; // "stochacq"
const TAG_TRIAL: u64 = 1;
const TAG_STEP: u64 = 2;
const TAG_PURPOSE: u64 = 3;
const TAG_LANE: u64 = 4;

/// splitmix64 finalizer (Steele, Lea, Flood 2014).
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// What a derived stream is for. Keeps draws for different stages of one
/// step (init vs. shuffle vs. acquisition noise) statistically unrelated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    /// Synthetic dataset generation.
    DataGen,
    /// Train/pool/test splitting and validation splits.
    Split,
    /// Parameter initialization.
    Init,
    /// Minibatch shuffling during training.
    Shuffle,
    /// Gumbel perturbation noise for acquisition.
    Acquire,
    /// Uniform fill-in when a stochastic policy runs out of finite keys.
    Fill,
    /// Synthetic inputs for benchmarks.
    Bench,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::DataGen => 0x10,
            Purpose::Split => 0x11,
            Purpose::Init => 0x12,
            Purpose::Shuffle => 0x13,
            Purpose::Acquire => 0x14,
            Purpose::Fill => 0x15,
            Purpose::Bench => 0x16,
        }
    }
}

/// Seed plus absorbed stream labels. Copyable; deriving a label returns a
/// new state and never mutates the parent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    seed: u64,
    key: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, key: mix(seed ^ TAG_ROOT) }
    }

    /// The base seed this state was built from (labels do not change it).
    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn absorb(&self, tag: u64, value: u64) -> Self {
        let k = mix(self.key ^ mix(tag.wrapping_mul(PHI)));
        Self { seed: self.seed, key: mix(k.wrapping_add(value.wrapping_mul(PHI))) }
    }

    pub fn with_trial(&self, trial: u64) -> Self {
        self.absorb(TAG_TRIAL, trial)
    }

    pub fn with_step(&self, step: u64) -> Self {
        self.absorb(TAG_STEP, step)
    }

    pub fn with_purpose(&self, purpose: Purpose) -> Self {
        self.absorb(TAG_PURPOSE, purpose.tag())
    }

    /// Generic extra label for things like ensemble members or benchmark
    /// repeats that need their own stream below (trial, step, purpose).
    pub fn with_lane(&self, lane: u64) -> Self {
        self.absorb(TAG_LANE, lane)
    }

    /// The `counter`-th raw draw of this stream.
    #[inline]
    pub fn value_at(&self, counter: u64) -> u64 {
        mix(self.key.wrapping_add(counter.wrapping_mul(PHI)))
    }

    /// The `counter`-th uniform draw, in the open interval (0, 1).
    ///
    /// Built from the top 53 bits of [`value_at`](Self::value_at) and clamped
    /// away from 0 by the smallest positive normal, so downstream logs stay
    /// finite. The upper end 1 − 2⁻⁵³ is already strictly below 1.
    #[inline]
    pub fn uniform_at(&self, counter: u64) -> f64 {
        let u = (self.value_at(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        u.max(f64::MIN_POSITIVE)
    }

    /// Sequential cursor over this stream, starting at counter 0.
    pub fn stream(&self) -> StreamRng {
        StreamRng { state: *self, counter: 0 }
    }
}

/// Mutable cursor over one labeled stream.
#[derive(Clone, Debug)]
pub struct StreamRng {
    state: RngState,
    counter: u64,
}

impl StreamRng {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.state.value_at(self.counter);
        self.counter += 1;
        v
    }

    /// Next uniform draw in (0, 1).
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        let v = self.state.uniform_at(self.counter);
        self.counter += 1;
        v
    }

    /// Standard normal via the Box–Muller transform (cosine branch only, so
    /// each normal consumes exactly two uniforms).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in [0, n) by 128-bit widening multiply. The modulo
    /// bias of at most n/2^64 is far below anything our statistics resolve.
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_below requires n > 0");
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i + 1);
            xs.swap(i, j);
        }
    }

    /// `k` distinct indices drawn uniformly from [0, n), in draw order
    /// (partial Fisher–Yates).
    pub fn choose(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot choose {k} of {n}");
        let mut idx: Vec<usize> = (0..n).collect();
        for j in 0..k {
            let pick = j + self.next_below(n - j);
            idx.swap(j, pick);
        }
        idx.truncate(k);
        idx
    }
}

/// Maps a uniform draw to Gumbel(mu, scale) by inverting the CDF
/// exp(−exp(−(g − μ)/β)): g = μ − β·ln(−ln u).
#[inline]
pub fn gumbel_from_uniform(u: f64, mu: f64, scale: f64) -> f64 {
    mu - scale * (-u.ln()).ln()
}

/// Draws one Gumbel(mu, scale) variate from the stream.
///
/// The underlying uniform is clamped away from {0, 1} (see
/// [`RngState::uniform_at`]) so the result is always finite.
pub fn gumbel_sample(rng: &mut StreamRng, mu: f64, scale: f64) -> Result<f64> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::parameter("scale", format!("must be finite and > 0, got {scale}")));
    }
    Ok(gumbel_from_uniform(rng.next_uniform(), mu, scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_labels_same_draws() {
        let a = RngState::new(7).with_trial(2).with_step(5).with_purpose(Purpose::Acquire);
        let b = RngState::new(7).with_trial(2).with_step(5).with_purpose(Purpose::Acquire);
        assert_eq!(a, b);
        for i in 0..100 {
            assert_eq!(a.value_at(i), b.value_at(i));
        }
    }

    #[test]
    fn distinct_labels_distinct_streams() {
        let base = RngState::new(7);
        let streams = [
            base.with_trial(0),
            base.with_trial(1),
            base.with_step(0),
            base.with_step(1),
            base.with_purpose(Purpose::Init),
            base.with_purpose(Purpose::Shuffle),
            base.with_lane(0),
            base.with_trial(0).with_step(0),
        ];
        for (i, a) in streams.iter().enumerate() {
            for b in &streams[i + 1..] {
                assert_ne!(a.value_at(0), b.value_at(0), "label collision between streams");
            }
        }
    }

    #[test]
    fn tag_value_pairs_do_not_alias() {
        // trial 3 and step 3 must not share a stream.
        let base = RngState::new(42);
        assert_ne!(base.with_trial(3), base.with_step(3));
        assert_ne!(base.with_trial(3).value_at(0), base.with_step(3).value_at(0));
    }

    #[test]
    fn uniform_in_open_interval_and_equidistributed() {
        let state = RngState::new(123).with_purpose(Purpose::Bench);
        let n = 100_000u64;
        let mut buckets = [0usize; 10];
        let mut sum = 0.0;
        for i in 0..n {
            let u = state.uniform_at(i);
            assert!(u > 0.0 && u < 1.0);
            buckets[(u * 10.0) as usize] += 1;
            sum += u;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "uniform mean off: {mean}");
        // Chi-square against uniform over 10 buckets, 9 dof; critical value
        // at significance 0.001 is 27.877 (standard table).
        let expected = n as f64 / 10.0;
        let chi2: f64 = buckets.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 27.877, "uniform chi-square too large: {chi2}");
    }

    #[test]
    fn stream_cursor_matches_indexed_access() {
        let state = RngState::new(9).with_purpose(Purpose::DataGen);
        let mut s = state.stream();
        for i in 0..20 {
            assert_eq!(s.next_u64(), state.value_at(i));
        }
    }

    #[test]
    fn normal_moments() {
        let mut s = RngState::new(2024).with_purpose(Purpose::DataGen).stream();
        let n = 200_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let z = s.next_normal();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "normal mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "normal variance {var}");
    }

    #[test]
    fn next_below_is_uniform_enough() {
        let mut s = RngState::new(5).with_purpose(Purpose::Split).stream();
        let mut counts = [0usize; 7];
        let n = 70_000;
        for _ in 0..n {
            counts[s.next_below(7)] += 1;
        }
        let expected = n as f64 / 7.0;
        // 6 dof at significance 0.001: 22.458.
        let chi2: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 22.458, "next_below chi-square {chi2}");
    }

    #[test]
    fn choose_returns_distinct_in_range() {
        let mut s = RngState::new(11).with_purpose(Purpose::Split).stream();
        for _ in 0..50 {
            let picked = s.choose(20, 8);
            assert_eq!(picked.len(), 8);
            let mut seen = [false; 20];
            for &i in &picked {
                assert!(i < 20);
                assert!(!seen[i], "duplicate index {i}");
                seen[i] = true;
            }
        }
    }

    #[test]
    fn gumbel_fixed_points() {
        // u = e^{-1} gives -ln(-ln(e^{-1})) = -ln(1) = 0, and translation
        // moves the fixed point with it.
        let u = (-1.0f64).exp();
        assert_eq!(gumbel_from_uniform(u, 0.0, 1.0), 0.0);
        assert_eq!(gumbel_from_uniform(u, 3.0, 1.0), 3.0);
    }

    #[test]
    fn gumbel_rejects_bad_scale() {
        let mut s = RngState::new(1).stream();
        assert!(gumbel_sample(&mut s, 0.0, 0.0).is_err());
        assert!(gumbel_sample(&mut s, 0.0, -1.0).is_err());
        assert!(gumbel_sample(&mut s, 0.0, f64::NAN).is_err());
        assert!(gumbel_sample(&mut s, 0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn gumbel_mean_is_euler_mascheroni() {
        // E[Gumbel(0, 1)] = γ ≈ 0.57722.
        let mut s = RngState::new(77).with_purpose(Purpose::Bench).stream();
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += gumbel_sample(&mut s, 0.0, 1.0).unwrap();
        }
        let mean = sum / n as f64;
        assert!((mean - 0.577_215_664_901_532_9).abs() < 0.01, "gumbel mean {mean}");
    }
}
