//! Finite-alphabet constellations: bit mapping, demapping, soft bits, and
//! the entrywise alphabet projection used by the precoder refinement loop.
//!
//! All constellations are normalized to unit average power so that a stream
//! of uniformly drawn symbols meets a power budget of 1 exactly. Labelings
//! are Gray:
//! - BPSK: bit 0 -> +1, bit 1 -> -1
//! - QPSK: bits (b0 b1) -> ((1-2 b0) + j (1-2 b1)) / sqrt(2)
//! - 16-QAM: per-axis Gray {00, 01, 11, 10} -> {-3, -1, +1, +3} / sqrt(10),
//!   I axis from (b0 b1), Q axis from (b2 b3)
//!
//! Point index == integer value of the bit pattern (MSB first). Nearest-point
//! ties always break to the lowest index.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)] // required when std is absent from the crate graph
use num_traits::Float;

use crate::config::ModScheme;
use crate::numerics::C64;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    scheme: ModScheme,
    points: Vec<C64>,
}

impl Constellation {
    pub fn scheme(&self) -> ModScheme {
        self.scheme
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.scheme.bits_per_symbol()
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Bits of point `index`, MSB first.
    pub fn bits_of(&self, index: usize) -> Vec<u8> {
        let n = self.bits_per_symbol();
        (0..n).map(|b| ((index >> (n - 1 - b)) & 1) as u8).collect()
    }
}

const SQRT1_2: f64 = core::f64::consts::FRAC_1_SQRT_2;

/// Gray-coded amplitude for a 2-bit axis label: {00, 01, 11, 10} map to
/// {-3, -1, +1, +3}.
fn qam16_axis(b_hi: usize, b_lo: usize) -> f64 {
    match (b_hi, b_lo) {
        (0, 0) => -3.0,
        (0, 1) => -1.0,
        (1, 1) => 1.0,
        _ => 3.0,
    }
}

pub fn make_constellation(scheme: ModScheme) -> Constellation {
    let points = match scheme {
        ModScheme::Bpsk => alloc::vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)],
        ModScheme::Qpsk => (0..4)
            .map(|i| {
                let b0 = (i >> 1) & 1;
                let b1 = i & 1;
                C64::new(
                    (1.0 - 2.0 * b0 as f64) * SQRT1_2,
                    (1.0 - 2.0 * b1 as f64) * SQRT1_2,
                )
            })
            .collect(),
        ModScheme::Qam16 => {
            let s = 1.0 / 10.0_f64.sqrt();
            (0..16)
                .map(|i| {
                    let re = qam16_axis((i >> 3) & 1, (i >> 2) & 1);
                    let im = qam16_axis((i >> 1) & 1, i & 1);
                    C64::new(re * s, im * s)
                })
                .collect()
        }
    };
    Constellation { scheme, points }
}

/// Map a bit sequence (values 0/1) to symbols. The length must divide into
/// whole symbols; partial symbols are an error, not a silent pad.
pub fn modulate(bits: &[u8], c: &Constellation) -> Result<Vec<C64>> {
    let bps = c.bits_per_symbol();
    if !bits.len().is_multiple_of(bps) {
        return Err(Error::Padding(format!(
            "{} bits do not divide into {}-bit symbols",
            bits.len(),
            bps
        )));
    }
    Ok(bits
        .chunks_exact(bps)
        .map(|chunk| {
            let mut idx = 0usize;
            for &b in chunk {
                idx = (idx << 1) | (b & 1) as usize;
            }
            c.points()[idx]
        })
        .collect())
}

/// Index of the nearest constellation point; ties break to the lowest index.
pub fn nearest_index(v: C64, c: &Constellation) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, p) in c.points().iter().enumerate() {
        let d = (v - p).norm_sqr();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Hard demapping: nearest point, then its bit label.
pub fn demodulate_hard(symbols: &[C64], c: &Constellation) -> Vec<u8> {
    let mut bits = Vec::with_capacity(symbols.len() * c.bits_per_symbol());
    for &s in symbols {
        bits.extend_from_slice(&c.bits_of(nearest_index(s, c)));
    }
    bits
}

/// Max-log per-bit LLRs. Positive means bit 0 is more likely:
/// `LLR_b = (min_{p: b=1} |y-p|^2 - min_{p: b=0} |y-p|^2) / noise_var`.
pub fn demodulate_llr(symbols: &[C64], c: &Constellation, noise_var: f64) -> Result<Vec<f64>> {
    if noise_var <= 0.0 || !noise_var.is_finite() {
        return Err(Error::InvalidInput(format!(
            "noise variance must be > 0, got {noise_var}"
        )));
    }
    let bps = c.bits_per_symbol();
    let mut llrs = Vec::with_capacity(symbols.len() * bps);
    for &y in symbols {
        for b in 0..bps {
            let shift = bps - 1 - b;
            let mut min0 = f64::INFINITY;
            let mut min1 = f64::INFINITY;
            for (i, p) in c.points().iter().enumerate() {
                let d = (y - p).norm_sqr();
                if (i >> shift) & 1 == 0 {
                    min0 = min0.min(d);
                } else {
                    min1 = min1.min(d);
                }
            }
            llrs.push((min1 - min0) / noise_var);
        }
    }
    Ok(llrs)
}

/// Entrywise projection onto the alphabet: the nearest constellation point.
pub fn project(v: C64, c: &Constellation) -> C64 {
    c.points()[nearest_index(v, c)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn close(a: C64, b: C64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn constellations_have_unit_power() {
        for scheme in [ModScheme::Bpsk, ModScheme::Qpsk, ModScheme::Qam16] {
            let c = make_constellation(scheme);
            assert_eq!(c.len(), 1 << c.bits_per_symbol());
            let p: f64 = c.points().iter().map(|z| z.norm_sqr()).sum::<f64>() / c.len() as f64;
            assert!((p - 1.0).abs() <= 1e-12, "{scheme:?} mean power {p}");
        }
    }

    #[test]
    fn bpsk_table() {
        let c = make_constellation(ModScheme::Bpsk);
        assert!(close(c.points()[0], C64::new(1.0, 0.0)));
        assert!(close(c.points()[1], C64::new(-1.0, 0.0)));
    }

    #[test]
    fn qpsk_bits_00_map_to_first_quadrant() {
        let c = make_constellation(ModScheme::Qpsk);
        let s = modulate(&[0, 0], &c).unwrap();
        assert!(close(s[0], C64::new(SQRT1_2, SQRT1_2)));
        // All four points, Gray sign pattern.
        let s = modulate(&[0, 1, 1, 0, 1, 1], &c).unwrap();
        assert!(close(s[0], C64::new(SQRT1_2, -SQRT1_2)));
        assert!(close(s[1], C64::new(-SQRT1_2, SQRT1_2)));
        assert!(close(s[2], C64::new(-SQRT1_2, -SQRT1_2)));
    }

    #[test]
    fn qam16_axis_levels() {
        let c = make_constellation(ModScheme::Qam16);
        let s = 1.0 / 10.0_f64.sqrt();
        // 0000 -> (-3, -3)/sqrt(10); 1010 -> (+3, +3)/sqrt(10)
        assert!(close(c.points()[0b0000], C64::new(-3.0 * s, -3.0 * s)));
        assert!(close(c.points()[0b1010], C64::new(3.0 * s, 3.0 * s)));
        assert!(close(c.points()[0b0111], C64::new(-s, s)));
        assert!(close(c.points()[0b0110], C64::new(-s, 3.0 * s)));
    }

    #[test]
    fn empty_bits_modulate_to_empty() {
        let c = make_constellation(ModScheme::Qpsk);
        assert!(modulate(&[], &c).unwrap().is_empty());
    }

    #[test]
    fn indivisible_length_is_an_error() {
        let c = make_constellation(ModScheme::Qpsk);
        assert!(matches!(modulate(&[1], &c), Err(Error::Padding(_))));
    }

    #[test]
    fn round_trip_zero_noise() {
        let mut rng = SeededRng::new(21);
        for scheme in [ModScheme::Bpsk, ModScheme::Qpsk, ModScheme::Qam16] {
            let c = make_constellation(scheme);
            let bits: Vec<u8> = (0..10_000 * c.bits_per_symbol())
                .map(|_| (rng.next_u64() & 1) as u8)
                .collect();
            let syms = modulate(&bits, &c).unwrap();
            assert_eq!(demodulate_hard(&syms, &c), bits);
        }
    }

    #[test]
    fn hard_decision_near_first_quadrant() {
        let c = make_constellation(ModScheme::Qpsk);
        let bits = demodulate_hard(&[C64::new(0.9, 0.1)], &c);
        assert_eq!(bits, alloc::vec![0, 0]);
    }

    #[test]
    fn origin_tie_breaks_to_lowest_index() {
        let c = make_constellation(ModScheme::Qpsk);
        assert_eq!(nearest_index(C64::new(0.0, 0.0), &c), 0);
        assert!(close(project(C64::new(0.0, 0.0), &c), c.points()[0]));
    }

    #[test]
    fn bpsk_llr_analytic() {
        let c = make_constellation(ModScheme::Bpsk);
        // max-log BPSK: LLR = 4 Re(y) / noise_var
        let llr = demodulate_llr(&[C64::new(1.0, 0.0)], &c, 1.0).unwrap();
        assert!((llr[0] - 4.0).abs() < 1e-12);
        let llr = demodulate_llr(&[C64::new(-0.3, 0.7)], &c, 0.5).unwrap();
        assert!((llr[0] - 4.0 * (-0.3) / 0.5).abs() < 1e-12);
    }

    #[test]
    fn midpoint_gives_zero_llr() {
        let c = make_constellation(ModScheme::Bpsk);
        let llr = demodulate_llr(&[C64::new(0.0, 0.4)], &c, 1.0).unwrap();
        assert_eq!(llr[0], 0.0);
    }

    #[test]
    fn llr_scales_inversely_with_noise() {
        let c = make_constellation(ModScheme::Qam16);
        let y = [C64::new(0.21, -0.55)];
        let a = demodulate_llr(&y, &c, 0.3).unwrap();
        let b = demodulate_llr(&y, &c, 0.6).unwrap();
        for (x, h) in a.iter().zip(b.iter()) {
            assert!((x - 2.0 * h).abs() < 1e-12);
        }
    }

    #[test]
    fn llr_requires_positive_noise() {
        let c = make_constellation(ModScheme::Bpsk);
        assert!(demodulate_llr(&[], &c, 0.0).is_err());
    }

    #[test]
    fn llr_sign_matches_hard_decision() {
        let mut rng = SeededRng::new(4);
        for scheme in [ModScheme::Bpsk, ModScheme::Qpsk] {
            let c = make_constellation(scheme);
            for _ in 0..500 {
                let y = C64::new(rng.next_f64() * 4.0 - 2.0, rng.next_f64() * 4.0 - 2.0);
                let llrs = demodulate_llr(&[y], &c, 0.7).unwrap();
                let hard = demodulate_hard(&[y], &c);
                for (b, llr) in hard.iter().zip(llrs.iter()) {
                    if *llr != 0.0 {
                        assert_eq!(*b == 1, *llr < 0.0);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_nearest(re in -3.0f64..3.0, im in -3.0f64..3.0) {
            for scheme in [ModScheme::Bpsk, ModScheme::Qpsk, ModScheme::Qam16] {
                let c = make_constellation(scheme);
                let v = C64::new(re, im);
                let p = project(v, &c);
                prop_assert!(close(project(p, &c), p));
                // exhaustive nearest-point oracle
                let best = c
                    .points()
                    .iter()
                    .map(|q| (v - q).norm_sqr())
                    .fold(f64::INFINITY, f64::min);
                prop_assert!(((v - p).norm_sqr() - best).abs() <= 1e-15);
            }
        }

        #[test]
        fn points_project_to_themselves(idx in 0usize..16) {
            let c = make_constellation(ModScheme::Qam16);
            let p = c.points()[idx];
            prop_assert!(close(project(p, &c), p));
        }
    }
}
