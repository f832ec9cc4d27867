//! Forward model and analysis toolkit for time-resolved polarization-entangled
//! photon pairs from a quantum-dot biexciton-exciton cascade.
//!
//! The crate simulates coincidence histograms in all 36 polarization basis
//! pairs of {H,V,D,A,R,L} x {H,V,D,A,R,L}, including detector timing jitter,
//! dark-count background and multiphoton admixture, reconstructs the two-photon
//! density matrix in sliding time windows by maximum-likelihood estimation, and
//! extracts concurrence evolution, lifetime and fine-structure-splitting fits
//! with Monte-Carlo error bars.

pub mod analysis;
pub mod error;
pub mod io;
pub mod optim;
pub mod polarization;
pub mod sim;
pub mod tomography;

pub use error::{Error, Result};
