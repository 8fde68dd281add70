//! Simulation harness around `mimolab-core`: link pipeline composition,
//! Monte-Carlo sweeps, rate/quality metrics, file formats, and throughput
//! measurement. The `mimolab` binary exposes all of it on the command line.

#![allow(clippy::needless_range_loop)]

pub use mimolab_core as core;

pub mod io;
pub mod link;
pub mod metrics;
pub mod report;
pub mod throughput;

/// Harness-level errors: core errors plus IO and format problems.
#[derive(Debug)]
pub enum HarnessError {
    Core(core::Error),
    Io(std::io::Error),
    Format(String),
    /// Rate-quality curves with disjoint quality ranges.
    NoOverlap(String),
}

impl std::fmt::Display for HarnessError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HarnessError::Core(e) => write!(f, "{e}"),
            HarnessError::Io(e) => write!(f, "io error: {e}"),
            HarnessError::Format(m) => write!(f, "format error: {m}"),
            HarnessError::NoOverlap(m) => write!(f, "no overlap: {m}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<core::Error> for HarnessError {
    fn from(e: core::Error) -> Self {
        HarnessError::Core(e)
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
