//! Block-fading MIMO channel: realization sampling, AWGN application, and
//! the additive channel-estimation-error model.
//!
//! Noise variance convention, fixed project-wide: `variance` is the total
//! per-complex-entry variance, split evenly between the real and imaginary
//! parts. SNR is defined at the transmit side as `P_z / variance`.

use alloc::format;

#[allow(unused_imports)] // required when std is absent from the crate graph
use num_traits::Float;

use crate::config::{ChannelModel, LinkConfig};
use crate::numerics::{sample_cgauss, CMatrix};
use crate::rng::SeededRng;
use crate::{Error, Result};

/// One fading block: the true matrix and, optionally, the noisy estimate
/// available to the transceiver.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: CMatrix,
    pub h_est: Option<CMatrix>,
}

impl ChannelRealization {
    pub fn perfect(h: CMatrix) -> Self {
        ChannelRealization { h, h_est: None }
    }

    /// Matrix a node should act on: the estimate when one exists and the
    /// node is configured to use it, otherwise the true channel.
    pub fn known(&self, use_estimate: bool) -> &CMatrix {
        match (&self.h_est, use_estimate) {
            (Some(est), true) => est,
            _ => &self.h,
        }
    }
}

/// Additive white Gaussian noise description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Total variance per complex entry.
    pub variance: f64,
}

impl NoiseSpec {
    pub fn new(variance: f64) -> Result<Self> {
        if variance < 0.0 || !variance.is_finite() {
            return Err(Error::InvalidInput(format!(
                "noise variance must be >= 0, got {variance}"
            )));
        }
        Ok(NoiseSpec { variance })
    }
}

/// Draw an i.i.d. CN(0, 1) Rayleigh-fading block, or the fixed identity when
/// the config asks for the AWGN anchor channel.
pub fn sample_rayleigh(cfg: &LinkConfig, rng: &mut SeededRng) -> ChannelRealization {
    let h = match cfg.channel {
        ChannelModel::Rayleigh => sample_cgauss(rng, cfg.n_r, cfg.n_t, 1.0)
            .expect("unit variance is always valid"),
        ChannelModel::Identity => CMatrix::from_fn(cfg.n_r, cfg.n_t, |i, j| {
            if i == j {
                num_complex::Complex64::new(1.0, 0.0)
            } else {
                num_complex::Complex64::new(0.0, 0.0)
            }
        }),
    };
    ChannelRealization::perfect(h)
}

/// `y = H z + n` with i.i.d. CN(0, variance) noise entries.
pub fn apply(
    ch: &ChannelRealization,
    z: &CMatrix,
    noise: NoiseSpec,
    rng: &mut SeededRng,
) -> Result<CMatrix> {
    if z.rows() != ch.h.cols() {
        return Err(Error::Dimension(format!(
            "channel is {}x{} but transmit block is {}x{}",
            ch.h.rows(),
            ch.h.cols(),
            z.rows(),
            z.cols()
        )));
    }
    let mut y = ch.h.mul(z);
    if noise.variance > 0.0 {
        for v in y.data_mut().iter_mut() {
            *v += rng.next_cgauss(noise.variance);
        }
    }
    Ok(y)
}

/// Attach a noisy estimate `h_est = h + E`, `E ~ CN(0, err_variance)` i.i.d.
pub fn perturb_csi(
    ch: &ChannelRealization,
    err_variance: f64,
    rng: &mut SeededRng,
) -> Result<ChannelRealization> {
    let e = sample_cgauss(rng, ch.h.rows(), ch.h.cols(), err_variance)?;
    Ok(ChannelRealization {
        h: ch.h.clone(),
        h_est: Some(ch.h.add(&e)),
    })
}

/// Transmit-side SNR to total per-entry noise variance:
/// `variance = p_z / 10^(snr_db / 10)`.
pub fn snr_to_noise_var(snr_db: f64, p_z: f64) -> Result<f64> {
    if p_z <= 0.0 || !p_z.is_finite() {
        return Err(Error::InvalidInput(format!("p_z must be > 0, got {p_z}")));
    }
    Ok(p_z / 10.0_f64.powf(snr_db / 10.0))
}
