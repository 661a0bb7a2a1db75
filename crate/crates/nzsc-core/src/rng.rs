//! Counter-based deterministic RNG.
//!
//! Every draw is a pure function of `(key, counter)`, so a stream can be
//! split into independent child streams with [`RngStream::derive`] without
//! consuming state. Parallel rollouts give each environment copy its own
//! derived stream, which makes results independent of worker count and
//! scheduling order. Not cryptographically secure.

/// Stream tags used to derive purpose-specific substreams. Keeping these
/// fixed means e.g. instance sampling and dynamics never share a stream,
/// so adding draws to one cannot shift the other.
pub mod tag {
    pub const INSTANCE: u64 = 0x01;
    pub const NOISE: u64 = 0x02;
    pub const DYNAMICS: u64 = 0x03;
    pub const POLICY: u64 = 0x04;
    pub const SYMMETRY: u64 = 0x05;
    pub const EPISODE: u64 = 0x10;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A seedable, splittable counter-based random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    key: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { key: splitmix(seed.wrapping_add(GOLDEN)), counter: 0 }
    }

    /// Child stream fully determined by `(self.key, tag)`. Does not consume
    /// state from `self`, so derivation order cannot matter.
    #[must_use]
    pub fn derive(&self, tag: u64) -> Self {
        let k = splitmix(self.key ^ splitmix(tag.wrapping_mul(GOLDEN) ^ 0xA5A5_A5A5_5A5A_5A5A));
        Self { key: k, counter: 0 }
    }

    /// Convenience for two-level derivation, e.g. `derive2(tag::EPISODE, i)`.
    #[must_use]
    pub fn derive2(&self, tag: u64, index: u64) -> Self {
        self.derive(tag).derive(index.wrapping_add(1))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let c = self.counter;
        self.counter = c.wrapping_add(1);
        splitmix(self.key ^ splitmix(c.wrapping_mul(GOLDEN).wrapping_add(0x6A09_E667_F3BC_C909)))
    }

    /// Uniform in `[0, 1)` with 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Multiply-shift; bias is negligible for the n (< 2^32) used here.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller. Consumes two draws per value.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    #[inline]
    pub fn normal_scaled(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.normal()
    }

    /// Sample an index from unnormalized nonnegative weights.
    pub fn weighted(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        debug_assert!(total > 0.0 && total.is_finite());
        let mut target = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            target -= w;
            if target < 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_and_counter_give_identical_draws() {
        let mut a = RngStream::new(42).derive2(tag::EPISODE, 7);
        let mut b = RngStream::new(42).derive2(tag::EPISODE, 7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derive_does_not_consume_parent_state() {
        let mut parent = RngStream::new(1);
        let before = parent;
        let _child = parent.derive(tag::NOISE);
        assert_eq!(parent, before);
        // Drawing after a derive matches never having derived.
        let mut fresh = RngStream::new(1);
        assert_eq!(parent.next_u64(), fresh.next_u64());
    }

    #[test]
    fn distinct_tags_give_distinct_streams() {
        let root = RngStream::new(3);
        let mut a = root.derive(tag::INSTANCE);
        let mut b = root.derive(tag::DYNAMICS);
        let overlap = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(overlap, 0);
    }

    #[test]
    fn uniform_stays_in_unit_interval() {
        let mut rng = RngStream::new(9);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments_match() {
        let mut rng = RngStream::new(11);
        let n = 200_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let x = rng.normal();
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        // SE of the mean is 1/sqrt(n) ~ 0.0022.
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn index_is_unbiased_enough() {
        let mut rng = RngStream::new(5);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[rng.index(3)] += 1;
        }
        for &c in &counts {
            assert!((c as f64 - 10_000.0).abs() < 500.0, "{counts:?}");
        }
    }

    #[test]
    fn weighted_respects_mass() {
        let mut rng = RngStream::new(6);
        let mut hits = 0;
        for _ in 0..20_000 {
            if rng.weighted(&[0.5, 0.15, 0.15, 0.1, 0.1]) == 0 {
                hits += 1;
            }
        }
        assert!((hits as f64 / 20_000.0 - 0.5).abs() < 0.02);
    }
}
