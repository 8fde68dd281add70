//! Reference MIMO detectors: zero-forcing, MMSE, matched filter, and the
//! brute-force maximum-likelihood oracle.
//!
//! Each detector sees an effective channel `h_eff` (N_r x N_s); which
//! composite that is (raw channel times precoder, or the precoder alone
//! after the learned combiner) is the caller's choice.

use alloc::format;
use alloc::vec::Vec;

use crate::modem::{project, Constellation};
use crate::numerics::{CMatrix, C64};
use crate::{Error, Result};

/// Hard symbol decisions plus, for the linear detectors, the pre-slicing
/// estimates.
#[derive(Debug, Clone)]
pub struct DetectionResult {
    pub symbols: CMatrix,
    pub soft: Option<CMatrix>,
}

/// Zero-forcing filter `(A^H A)^{-1} A^H`.
pub fn zf_filter(h_eff: &CMatrix) -> Result<CMatrix> {
    let gram = h_eff.hermitian().mul(h_eff);
    let inv = gram
        .inverse()
        .map_err(|_| Error::Singularity("effective channel is rank-deficient".into()))?;
    Ok(inv.mul(&h_eff.hermitian()))
}

/// MMSE filter `(A^H A + noise_var I)^{-1} A^H`.
pub fn mmse_filter(h_eff: &CMatrix, noise_var: f64) -> Result<CMatrix> {
    if noise_var < 0.0 {
        return Err(Error::InvalidInput("noise_var must be >= 0".into()));
    }
    let n = h_eff.cols();
    let mut gram = h_eff.hermitian().mul(h_eff);
    for i in 0..n {
        gram[(i, i)] += C64::new(noise_var, 0.0);
    }
    Ok(gram.inverse()?.mul(&h_eff.hermitian()))
}

fn slice_columns(soft: &CMatrix, c: &Constellation) -> CMatrix {
    CMatrix::from_fn(soft.rows(), soft.cols(), |i, j| project(soft[(i, j)], c))
}

pub fn zf_detect(y: &CMatrix, h_eff: &CMatrix, c: &Constellation) -> Result<DetectionResult> {
    check_shapes(y, h_eff)?;
    let soft = zf_filter(h_eff)?.mul(y);
    Ok(DetectionResult {
        symbols: slice_columns(&soft, c),
        soft: Some(soft),
    })
}

pub fn mmse_detect(
    y: &CMatrix,
    h_eff: &CMatrix,
    noise_var: f64,
    c: &Constellation,
) -> Result<DetectionResult> {
    check_shapes(y, h_eff)?;
    let soft = mmse_filter(h_eff, noise_var)?.mul(y);
    Ok(DetectionResult {
        symbols: slice_columns(&soft, c),
        soft: Some(soft),
    })
}

/// Matched filter `A^H y`; the inversion-free member of the detector menu.
pub fn mf_detect(y: &CMatrix, h_eff: &CMatrix, c: &Constellation) -> Result<DetectionResult> {
    check_shapes(y, h_eff)?;
    let soft = h_eff.hermitian().mul(y);
    Ok(DetectionResult {
        symbols: slice_columns(&soft, c),
        soft: Some(soft),
    })
}

/// Exhaustive per-column search over all |M|^N_s candidate vectors.
/// Guarded so nobody accidentally requests an astronomically large search.
pub fn ml_detect(y: &CMatrix, h_eff: &CMatrix, c: &Constellation) -> Result<DetectionResult> {
    check_shapes(y, h_eff)?;
    let n_s = h_eff.cols();
    let m = c.len();
    let space = (m as u64).checked_pow(n_s as u32).unwrap_or(u64::MAX);
    if space > 65_536 {
        return Err(Error::Scale(format!(
            "ML search space {m}^{n_s} exceeds 65536"
        )));
    }
    let count = space as usize;
    // Precompute A*s for every candidate (indices in base-|M|, stream 0 is
    // the least significant digit).
    let mut candidates: Vec<Vec<C64>> = Vec::with_capacity(count);
    let mut cand_syms: Vec<Vec<C64>> = Vec::with_capacity(count);
    for code in 0..count {
        let mut idx = code;
        let mut s = Vec::with_capacity(n_s);
        for _ in 0..n_s {
            s.push(c.points()[idx % m]);
            idx /= m;
        }
        let img: Vec<C64> = (0..h_eff.rows())
            .map(|r| (0..n_s).map(|t| h_eff[(r, t)] * s[t]).sum())
            .collect();
        candidates.push(img);
        cand_syms.push(s);
    }
    let mut hard = CMatrix::zeros(n_s, y.cols());
    for col in 0..y.cols() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (ci, img) in candidates.iter().enumerate() {
            let mut d = 0.0;
            for r in 0..y.rows() {
                d += (y[(r, col)] - img[r]).norm_sqr();
                if d >= best_d {
                    break;
                }
            }
            if d < best_d {
                best_d = d;
                best = ci;
            }
        }
        for t in 0..n_s {
            hard[(t, col)] = cand_syms[best][t];
        }
    }
    Ok(DetectionResult {
        symbols: hard,
        soft: None,
    })
}

fn check_shapes(y: &CMatrix, h_eff: &CMatrix) -> Result<()> {
    if y.rows() != h_eff.rows() {
        return Err(Error::Dimension(format!(
            "received block has {} rows, effective channel {}",
            y.rows(),
            h_eff.rows()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{apply, ChannelRealization, NoiseSpec};
    use crate::config::ModScheme;
    use crate::modem::make_constellation;
    use crate::numerics::{frob_norm, sample_cgauss};
    use crate::rng::SeededRng;

    fn qpsk_block(rng: &mut SeededRng, n_s: usize, k: usize) -> CMatrix {
        let c = make_constellation(ModScheme::Qpsk);
        CMatrix::from_fn(n_s, k, |_, _| {
            c.points()[(rng.next_u64() & 3) as usize]
        })
    }

    #[test]
    fn zf_recovers_identity_channel() {
        let c = make_constellation(ModScheme::Qpsk);
        let mut rng = SeededRng::new(1);
        let x = qpsk_block(&mut rng, 2, 8);
        let r = zf_detect(&x, &CMatrix::identity(2), &c).unwrap();
        assert_eq!(r.symbols, x);
    }

    #[test]
    fn zf_inverts_diagonal_scaling() {
        let c = make_constellation(ModScheme::Qpsk);
        let mut rng = SeededRng::new(2);
        let x = qpsk_block(&mut rng, 2, 4);
        let h = CMatrix::diag(2, 2, &[2.0, 1.0]);
        let y = h.mul(&x);
        let r = zf_detect(&y, &h, &c).unwrap();
        assert_eq!(r.symbols, x);
        assert!(frob_norm(&r.soft.unwrap().sub(&x)) < 1e-10);
    }

    #[test]
    fn zf_rejects_rank_deficient_channel() {
        let c = make_constellation(ModScheme::Qpsk);
        let h = CMatrix::from_fn(2, 2, |_, _| C64::new(1.0, 0.0));
        let y = CMatrix::zeros(2, 1);
        assert!(matches!(zf_detect(&y, &h, &c), Err(Error::Singularity(_))));
    }

    #[test]
    fn mmse_equals_zf_without_noise() {
        let c = make_constellation(ModScheme::Qpsk);
        let mut rng = SeededRng::new(3);
        let h = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
        let y = sample_cgauss(&mut rng, 2, 5, 1.0).unwrap();
        let a = zf_detect(&y, &h, &c).unwrap().soft.unwrap();
        let b = mmse_detect(&y, &h, 0.0, &c).unwrap().soft.unwrap();
        assert!(frob_norm(&a.sub(&b)) < 1e-10);
    }

    #[test]
    fn mmse_scalar_wiener() {
        let c = make_constellation(ModScheme::Bpsk);
        let h = CMatrix::identity(1);
        let y = CMatrix::from_fn(1, 1, |_, _| C64::new(0.8, -0.2));
        let r = mmse_detect(&y, &h, 1.0, &c).unwrap();
        let soft = r.soft.unwrap();
        assert!((soft[(0, 0)] - C64::new(0.4, -0.1)).norm() < 1e-12);
    }

    #[test]
    fn mmse_shrinks_to_zero_at_huge_noise() {
        let c = make_constellation(ModScheme::Qpsk);
        let mut rng = SeededRng::new(4);
        let h = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
        let y = sample_cgauss(&mut rng, 2, 3, 1.0).unwrap();
        let soft = mmse_detect(&y, &h, 1e12, &c).unwrap().soft.unwrap();
        assert!(frob_norm(&soft) < 1e-5);
    }

    #[test]
    fn ml_exact_on_noiseless_channel() {
        let c = make_constellation(ModScheme::Qpsk);
        let mut rng = SeededRng::new(5);
        let h = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
        let x = qpsk_block(&mut rng, 2, 16);
        let y = h.mul(&x);
        let r = ml_detect(&y, &h, &c).unwrap();
        assert_eq!(r.symbols, x);
    }

    #[test]
    fn ml_matches_hand_enumeration() {
        let c = make_constellation(ModScheme::Qpsk);
        let mut rng = SeededRng::new(6);
        let h = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
        let y = sample_cgauss(&mut rng, 2, 1, 2.0).unwrap();
        let r = ml_detect(&y, &h, &c).unwrap();
        // independent enumeration of the 16 candidate pairs
        let mut best = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        let mut best_d = f64::INFINITY;
        for &s0 in c.points() {
            for &s1 in c.points() {
                let r0 = y[(0, 0)] - (h[(0, 0)] * s0 + h[(0, 1)] * s1);
                let r1 = y[(1, 0)] - (h[(1, 0)] * s0 + h[(1, 1)] * s1);
                let d = r0.norm_sqr() + r1.norm_sqr();
                if d < best_d {
                    best_d = d;
                    best = (s0, s1);
                }
            }
        }
        assert_eq!(r.symbols[(0, 0)], best.0);
        assert_eq!(r.symbols[(1, 0)], best.1);
    }

    #[test]
    fn ml_scale_guard() {
        let c = make_constellation(ModScheme::Qam16);
        let h = CMatrix::identity(5);
        let y = CMatrix::zeros(5, 1);
        assert!(matches!(ml_detect(&y, &h, &c), Err(Error::Scale(_))));
    }

    #[test]
    fn mf_is_hermitian_projection() {
        let c = make_constellation(ModScheme::Qpsk);
        let mut rng = SeededRng::new(7);
        let h = sample_cgauss(&mut rng, 3, 2, 1.0).unwrap();
        let y = sample_cgauss(&mut rng, 3, 2, 1.0).unwrap();
        let r = mf_detect(&y, &h, &c).unwrap();
        assert!(frob_norm(&r.soft.unwrap().sub(&h.hermitian().mul(&y))) < 1e-12);
    }

    #[test]
    fn zf_noise_amplification_exceeds_mmse() {
        // Near-singular channel: ZF blows up the noise, MMSE regularizes.
        let c = make_constellation(ModScheme::Qpsk);
        let h = CMatrix::from_slice(
            2,
            2,
            &[
                C64::new(1.0, 0.0),
                C64::new(0.95, 0.0),
                C64::new(0.95, 0.0),
                C64::new(1.0, 0.0),
            ],
        )
        .unwrap();
        let ch = ChannelRealization::perfect(h.clone());
        let mut rng = SeededRng::new(8);
        let nv = 0.5;
        let mut zf_err = 0.0;
        let mut mmse_err = 0.0;
        for _ in 0..400 {
            let x = qpsk_block(&mut rng, 2, 4);
            let y = apply(&ch, &x, NoiseSpec::new(nv).unwrap(), &mut rng).unwrap();
            let a = zf_detect(&y, &h, &c).unwrap().soft.unwrap();
            let b = mmse_detect(&y, &h, nv, &c).unwrap().soft.unwrap();
            zf_err += a.sub(&x).norm_sqr();
            mmse_err += b.sub(&x).norm_sqr();
        }
        assert!(
            zf_err > mmse_err,
            "ZF soft error {zf_err} should exceed MMSE {mmse_err}"
        );
    }
}
