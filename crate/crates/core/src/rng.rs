//! Counter-based splittable random number generator.
//!
//! Monte-Carlo trials each get their own stream derived from
//! `(master seed, trial index)`, so trials can run in any order (or in
//! parallel) and still reproduce bit-identically. The generator is a
//! SplitMix64 sequence: output `i` is a pure function of `(key, i)`, no
//! hidden state beyond the counter.

use num_complex::Complex64;
#[allow(unused_imports)] // required when std is absent from the crate graph
use num_traits::Float;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer; a bijective 64-bit mix.
#[inline]
fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic seeded generator. Cloning forks the full state.
#[derive(Debug, Clone)]
pub struct SeededRng {
    key: u64,
    ctr: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng { key: seed, ctr: 0 }
    }

    /// Derive an independent stream for `stream` (trial index, block index,
    /// purpose tag, ...). Derivation does not consume any state, so the order
    /// in which streams are derived is irrelevant.
    pub fn derive(&self, stream: u64) -> SeededRng {
        SeededRng {
            key: mix(self.key ^ mix(stream.wrapping_add(GOLDEN))),
            ctr: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.ctr = self.ctr.wrapping_add(1);
        mix(self.key.wrapping_add(self.ctr.wrapping_mul(GOLDEN)))
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in 0..bound.
    pub fn next_below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        // Modulo bias is < 2^-50 for the bounds used here (all < 2^14).
        (self.next_u64() % bound as u64) as usize
    }

    /// Pair of independent standard normal samples (Box-Muller).
    pub fn next_gaussian_pair(&mut self) -> (f64, f64) {
        // u1 in (0, 1] so the log is always finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * core::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// Circularly symmetric complex Gaussian with total variance `variance`
    /// (each real component carries `variance / 2`).
    pub fn next_cgauss(&mut self, variance: f64) -> Complex64 {
        let (a, b) = self.next_gaussian_pair();
        let s = (variance * 0.5).sqrt();
        Complex64::new(a * s, b * s)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derive_is_order_independent() {
        let base = SeededRng::new(7);
        let mut x = base.derive(3);
        let _ = base.derive(1); // deriving another stream must not disturb x
        let mut y = SeededRng::new(7).derive(3);
        assert_eq!(x.next_u64(), y.next_u64());
    }

    #[test]
    fn derived_streams_differ() {
        let base = SeededRng::new(7);
        let a = base.derive(0).next_u64();
        let b = base.derive(1).next_u64();
        assert_ne!(a, b);
    }

    #[test]
    fn uniform_in_range() {
        let mut r = SeededRng::new(1);
        for _ in 0..1000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn gaussian_moments() {
        let mut r = SeededRng::new(9);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let (a, b) = r.next_gaussian_pair();
            sum += a + b;
            sumsq += a * a + b * b;
        }
        let m = sum / (2 * n) as f64;
        let v = sumsq / (2 * n) as f64;
        assert!(m.abs() < 0.01, "mean {m}");
        assert!((v - 1.0).abs() < 0.02, "variance {v}");
    }
}
