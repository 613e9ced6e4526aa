//! Gaussian collective-spin simulator for cavity-aided QND measurement.
//!
//! The crate models an ensemble of two-level atoms as a mean Bloch vector
//! carrying two Gaussian quadratures, reads the population out through the
//! vacuum Rabi splitting of a lossy cavity, and provides the statistical
//! tools that turn repeated readouts into conditional variances and
//! spectroscopic gains.
//!
//! Everything here is `no_std` + `alloc`. Randomness is always passed in by
//! the caller, so any driver can decide how streams are split across trials.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analysis;
pub mod cavity;
pub mod decoherence;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod math;
pub mod poly;
pub mod sequence;
pub mod spectroscopy;
pub mod spin;
pub mod stats;

pub use error::{Error, Result};
pub use math::Vec3;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
