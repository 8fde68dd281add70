//! Link-level MIMO building blocks.
//!
//! Everything in this crate is deterministic given the seeds fed to it and is
//! written against `core` + `alloc`, so the algorithms can be reused in
//! hosted and embedded simulators alike. IO, file formats, and the CLI live in
//! the companion `mimolab` crate.
//!
//! Module map:
//! - [`numerics`]: complex matrices, SVD, seeded Gaussian sampling
//! - [`channel`]: block-fading channel, AWGN, imperfect-CSI perturbation
//! - [`modem`]: constellations, bit mapping, LLRs, alphabet projection
//! - [`chancode`]: LDPC encode/decode plus an uncoded pass-through
//! - [`precoder`]: SVD-aligned water-filled precoding with a DFT codebook
//! - [`pcen`]: unfolded finite-alphabet precoder refinement and the learned
//!   linear combiner, with the alternating trainer
//! - [`detection`]: ZF / MMSE / ML / MF reference detectors
//! - [`ppen`]: deformable convolution, strip pooling, and the
//!   quantization-adaptive image filter built from them
//! - [`proxy`]: differentiable surrogate of a non-differentiable pipeline,
//!   used to pass gradients to an upstream preprocessor

#![cfg_attr(not(test), no_std)]
// dense index arithmetic reads better with explicit loops here
#![allow(clippy::needless_range_loop)]

extern crate alloc;

use alloc::string::String;
use core::fmt;

pub mod chancode;
pub mod channel;
pub mod config;
pub mod detection;
pub mod modem;
pub mod numerics;
pub mod pcen;
pub mod ppen;
pub mod precoder;
pub mod proxy;
pub mod rng;

pub use config::LinkConfig;
pub use numerics::CMatrix;
pub use rng::SeededRng;

/// Errors shared by every module in the crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// A precondition on an input value was violated.
    InvalidInput(String),
    /// Matrix or sequence shapes do not line up.
    Dimension(String),
    /// A bit sequence does not divide into whole symbols.
    Padding(String),
    /// A matrix that must be inverted is singular (or a diagonal entry is zero).
    Singularity(String),
    /// The channel does not support the requested number of streams.
    Rank(String),
    /// A code construction failed (retry with a different seed).
    Construction(String),
    /// A search space exceeds the configured guard.
    Scale(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(m) => write!(f, "invalid input: {m}"),
            Error::Dimension(m) => write!(f, "dimension mismatch: {m}"),
            Error::Padding(m) => write!(f, "padding error: {m}"),
            Error::Singularity(m) => write!(f, "singular matrix: {m}"),
            Error::Rank(m) => write!(f, "rank deficiency: {m}"),
            Error::Construction(m) => write!(f, "construction failed: {m}"),
            Error::Scale(m) => write!(f, "scale guard: {m}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
