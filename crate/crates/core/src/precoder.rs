//! Standard transmit precoder: SVD-aligned, water-filled, codebook-rotated.
//!
//! The composite precoding matrix is `U_g * Lambda_g * V_g^H` where `U_g`
//! comes from the channel SVD, `Lambda_g` carries per-stream amplitude
//! weights from water-filling, and `V_g` is drawn from a small DFT codebook
//! (a phase-ramped DFT family standing in for standardized codebook tables).
//!
//! Symbols map to streams column-major: symbol `i` of a block lands at
//! position `[i % n_s, i / n_s]`, so consecutive symbols rotate round-robin
//! across the streams.

use alloc::format;
use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // required when std is absent from the crate graph
use num_traits::Float;

use crate::config::LinkConfig;
use crate::numerics::{svd, CMatrix, C64};
use crate::{Error, Result};

/// Per-stream transmit powers and the water level that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub weights: Vec<f64>,
    pub water_level: f64,
}

/// Water-filling over parallel channels with singular values `gains`:
/// `p_i = max(0, mu - noise_var / gains_i^2)` with `mu` solving
/// `sum p_i = budget`. The water level is found by bisection.
pub fn water_filling(gains: &[f64], noise_var: f64, budget: f64) -> Result<PowerAllocation> {
    if gains.is_empty() {
        return Err(Error::InvalidInput("water filling over empty gains".into()));
    }
    if gains.iter().any(|&g| g <= 0.0 || !g.is_finite()) {
        return Err(Error::InvalidInput("gains must be positive and finite".into()));
    }
    if budget <= 0.0 || noise_var < 0.0 {
        return Err(Error::InvalidInput(format!(
            "need budget > 0 (got {budget}) and noise_var >= 0 (got {noise_var})"
        )));
    }
    let floors: Vec<f64> = gains.iter().map(|&g| noise_var / (g * g)).collect();
    let lo_floor = floors.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi_floor = floors.iter().cloned().fold(0.0, f64::max);
    let total = |mu: f64| -> f64 { floors.iter().map(|&f| (mu - f).max(0.0)).sum() };

    let mut lo = lo_floor;
    let mut hi = hi_floor + budget;
    // total(lo) = 0 <= budget <= total(hi); bisect the monotone residual.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if (total(hi) - budget).abs() <= 1e-12 * budget.max(1.0) && hi - lo <= 1e-13 * hi.abs().max(1.0) {
            break;
        }
    }
    let mu = hi;
    let mut weights: Vec<f64> = floors.iter().map(|&f| (mu - f).max(0.0)).collect();
    // Absorb the residual bisection error into the active streams so the
    // budget is met exactly up to rounding.
    let sum: f64 = weights.iter().sum();
    let active = weights.iter().filter(|&&w| w > 0.0).count();
    if active > 0 {
        let corr = (budget - sum) / active as f64;
        for w in weights.iter_mut() {
            if *w > 0.0 {
                *w = (*w + corr).max(0.0);
            }
        }
    }
    Ok(PowerAllocation {
        weights,
        water_level: mu,
    })
}

/// The composite precoder `U_g * Lambda_g * V_g^H` plus its factors.
#[derive(Debug, Clone)]
pub struct PrecoderSpec {
    pub u_g: CMatrix,
    pub lambda_g: CMatrix,
    pub allocation: PowerAllocation,
    pub v_g: CMatrix,
    matrix: CMatrix,
}

impl PrecoderSpec {
    pub fn from_parts(u_g: CMatrix, lambda_g: CMatrix, allocation: PowerAllocation, v_g: CMatrix) -> Self {
        let matrix = u_g.mul(&lambda_g).mul(&v_g.hermitian());
        PrecoderSpec {
            u_g,
            lambda_g,
            allocation,
            v_g,
            matrix,
        }
    }

    /// Composite N_t x N_s precoding matrix.
    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }
}

/// Unitary DFT matrix of size n: `F[a, b] = exp(-j 2 pi a b / n) / sqrt(n)`.
fn dft(n: usize) -> CMatrix {
    let s = 1.0 / (n as f64).sqrt();
    CMatrix::from_fn(n, n, |a, b| {
        let ang = -2.0 * core::f64::consts::PI * (a * b) as f64 / n as f64;
        Complex64::from_polar(s, ang)
    })
}

/// Four phase-ramped variants of the DFT matrix; all unitary.
pub fn dft_codebook(n: usize) -> Vec<CMatrix> {
    let f = dft(n);
    (0..4)
        .map(|r| {
            CMatrix::from_fn(n, n, |a, b| {
                let ramp = 2.0 * core::f64::consts::PI * (r * b) as f64 / (4 * n) as f64;
                f[(a, b)] * Complex64::from_polar(1.0, ramp)
            })
        })
        .collect()
}

/// Build the precoder for channel `h`: align with the right singular basis,
/// water-fill the top `n_s` singular values against the total budget
/// `n_t * p_z` (so the per-antenna average power meets `p_z`), and pick the
/// codebook rotation maximizing the summed squared column gains of the
/// composite channel. Ties keep the first candidate.
pub fn build_precoder(h: &CMatrix, cfg: &LinkConfig, noise_var: f64) -> Result<PrecoderSpec> {
    if h.rows() != cfg.n_r || h.cols() != cfg.n_t {
        return Err(Error::Dimension(format!(
            "channel is {}x{}, config says {}x{}",
            h.rows(),
            h.cols(),
            cfg.n_r,
            cfg.n_t
        )));
    }
    let decomp = svd(h)?;
    let smax = decomp.s.first().copied().unwrap_or(0.0);
    if cfg.n_s > decomp.s.len() || smax <= 0.0 || decomp.s[cfg.n_s - 1] <= 1e-12 * smax {
        return Err(Error::Rank(format!(
            "channel rank below n_s={} (singular values {:?})",
            cfg.n_s, decomp.s
        )));
    }
    let gains = &decomp.s[..cfg.n_s];
    let allocation = water_filling(gains, noise_var, cfg.p_z * cfg.n_t as f64)?;
    let amps: Vec<f64> = allocation.weights.iter().map(|&p| p.sqrt()).collect();
    let lambda_g = CMatrix::diag(cfg.n_t, cfg.n_s, &amps);
    let u_g = decomp.v; // right singular basis of the channel

    let base = h.mul(&u_g).mul(&lambda_g);
    let mut best: Option<(f64, CMatrix)> = None;
    for cand in dft_codebook(cfg.n_s) {
        let eff = base.mul(&cand.hermitian());
        let metric = eff.norm_sqr();
        let better = match &best {
            None => true,
            Some((m, _)) => metric > *m * (1.0 + 1e-12),
        };
        if better {
            best = Some((metric, cand));
        }
    }
    let (_, v_g) = best.expect("codebook is never empty");
    Ok(PrecoderSpec::from_parts(u_g, lambda_g, allocation, v_g))
}

/// Reshape a symbol sequence into the N_s x k block (column-major fill).
pub fn symbols_to_streams(x_e: &[C64], n_s: usize) -> Result<CMatrix> {
    if n_s == 0 || !x_e.len().is_multiple_of(n_s) {
        return Err(Error::Dimension(format!(
            "{} symbols do not fill {}-stream columns",
            x_e.len(),
            n_s
        )));
    }
    let k = x_e.len() / n_s;
    Ok(CMatrix::from_fn(n_s, k, |s, t| x_e[t * n_s + s]))
}

/// Inverse of [`symbols_to_streams`].
pub fn streams_to_symbols(x: &CMatrix) -> Vec<C64> {
    let mut out = Vec::with_capacity(x.rows() * x.cols());
    for t in 0..x.cols() {
        for s in 0..x.rows() {
            out.push(x[(s, t)]);
        }
    }
    out
}

/// Apply the standard precoder: reshape `x_e` to N_s x k and return
/// `U_g Lambda_g V_g^H X_e` of shape N_t x k.
pub fn standard_precode(x_e: &[C64], spec: &PrecoderSpec, cfg: &LinkConfig) -> Result<CMatrix> {
    if !x_e.len().is_multiple_of(cfg.n_s) {
        return Err(Error::Dimension(format!(
            "{} symbols do not divide into {} streams",
            x_e.len(),
            cfg.n_s
        )));
    }
    let x = symbols_to_streams(x_e, cfg.n_s)?;
    Ok(spec.matrix().mul(&x))
}
