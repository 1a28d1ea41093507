//! Fourier-spectral solver and estimate-verification harness for the
//! spatially inhomogeneous non-cutoff Kac equation near Maxwellian.

pub mod cli;
pub mod collision;
pub mod config;
pub mod error;
pub mod grid;
pub mod maxwellian;
pub mod multiplier;
pub mod norms;
pub mod quadrature;
pub mod solver;
pub mod verify;

pub use error::{KacError, Result};
pub use grid::{GridSpec, PhaseField, SpectralField, Transform};
