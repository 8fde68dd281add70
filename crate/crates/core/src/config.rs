//! Link configuration shared by every pipeline stage.

use alloc::format;

use crate::pcen::PcenParams;
use crate::{Error, Result};

/// Modulation scheme of the finite alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModScheme {
    Bpsk,
    Qpsk,
    Qam16,
}

impl ModScheme {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            ModScheme::Bpsk => 1,
            ModScheme::Qpsk => 2,
            ModScheme::Qam16 => 4,
        }
    }
}

/// Channel code selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeRate {
    Half,
    ThreeQuarter,
    /// Uncoded pass-through, for ablations and anchors.
    Passthrough,
}

/// Fading model for generated channel realizations. Externally supplied
/// matrices (the CSI ensemble file) are handled by the harness, which replays
/// them instead of sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelModel {
    /// i.i.d. CN(0, 1) entries, redrawn every block.
    Rayleigh,
    /// Fixed identity channel (AWGN anchor and loopback checks).
    Identity,
}

/// Channel-knowledge model. The estimate, when enabled, is applied at the
/// transmitter and/or receiver independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CsiMode {
    Perfect,
    Noisy {
        err_var: f64,
        at_tx: bool,
        at_rx: bool,
    },
}

/// Linear detector used to undo the (effective) channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Zf,
    Mmse,
    Ml,
    Mf,
}

/// Finite-alphabet precoder refinement: off (the precoded block goes out
/// unmodified), the one-shot alphabet projection ablation, or the full
/// refinement with trained parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum PcenMode {
    Off,
    /// Transmit the entrywise alphabet projection of the precoded block with
    /// its Wiener combiner; the refinement loop disabled.
    Projection,
    On(PcenParams),
}

/// Everything a single link run needs to know.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub n_s: usize,
    /// Channel uses per fading block.
    pub k: usize,
    pub modulation: ModScheme,
    pub code_rate: CodeRate,
    /// Average transmit power budget per antenna per channel use.
    pub p_z: f64,
    pub snr_db: f64,
    pub channel: ChannelModel,
    pub csi: CsiMode,
    pub pcen: PcenMode,
    pub detector: DetectorKind,
    /// LDPC codeword length.
    pub ldpc_block: usize,
    /// Min-sum decoder iteration cap.
    pub decoder_iters: usize,
    /// Whole-payload repetitions combined at the receiver.
    pub reps: usize,
    pub seed: u64,
}

impl LinkConfig {
    /// 2x2 QPSK rate-1/2 link at 6 dB; the default operating point.
    pub fn default_2x2() -> Self {
        LinkConfig {
            n_t: 2,
            n_r: 2,
            n_s: 2,
            k: 16,
            modulation: ModScheme::Qpsk,
            code_rate: CodeRate::Half,
            p_z: 1.0,
            snr_db: 6.0,
            channel: ChannelModel::Rayleigh,
            csi: CsiMode::Perfect,
            pcen: PcenMode::Off,
            detector: DetectorKind::Zf,
            ldpc_block: 1024,
            decoder_iters: 50,
            reps: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_t == 0 || self.n_r == 0 || self.n_s == 0 {
            return Err(Error::InvalidInput("antenna/stream counts must be >= 1".into()));
        }
        if self.n_s > self.n_t.min(self.n_r) {
            return Err(Error::InvalidInput(format!(
                "n_s={} exceeds min(n_t={}, n_r={})",
                self.n_s, self.n_t, self.n_r
            )));
        }
        if self.p_z <= 0.0 || !self.p_z.is_finite() {
            return Err(Error::InvalidInput("p_z must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidInput("k must be >= 1".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidInput("reps must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        LinkConfig::default_2x2().validate().unwrap();
    }

    #[test]
    fn stream_bound_enforced() {
        let mut cfg = LinkConfig::default_2x2();
        cfg.n_s = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn power_must_be_positive() {
        let mut cfg = LinkConfig::default_2x2();
        cfg.p_z = 0.0;
        assert!(cfg.validate().is_err());
    }
}
