//! Desk-scale numerics for fractional operators and the inverse problems
//! built on them.
//!
//! Everything lives on a periodic grid ([`Grid`]) that stands in for
//! `R^n`. Fourier multipliers give the fractional Laplacian and Riesz
//! potentials; the remaining modules use those operators for Poincaré
//! constants, exterior-value Schrödinger problems, the magnetic variant,
//! d-plane transforms and unique-continuation probes.

pub mod dplane;
pub mod error;
pub mod fft;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod magnetic;
pub mod poincare;
pub mod region;
pub mod schrodinger;
pub mod spectral;
pub mod ucp;

pub use error::{Error, Result};
pub use grid::{Exponent, Field, FreqGrid, Grid};
pub use spectral::{frac_laplacian, l2_inner, make_bump, riesz_potential, sobolev_norm, MeanPolicy, RieszBackend};
