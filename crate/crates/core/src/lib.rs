//! Numerical laboratory for quenched versus annealed bulk gap universality of
//! Wigner-type random matrices.
//!
//! The crate is organised bottom-up:
//!
//! * [`ensembles`] samples Wigner, deformed Wigner and monoparametric matrices.
//! * [`spectral`] wraps dense Hermitian eigendecomposition and the observables
//!   built on it (gaps, overlaps, two-resolvent traces).
//! * [`mde`] solves the scalar reduction of the Matrix Dyson Equation and
//!   derives densities, quantiles and stability factors from it.
//! * [`gapref`] evaluates the Gaudin-Mehta gap densities through the
//!   sigma-form of Painlevé V, with a sine-kernel determinant cross-check.
//! * [`dbm`] simulates Dyson Brownian motion at matrix and eigenvalue level.
//! * [`harness`] runs seeded experiments and writes CSV output.

pub mod dbm;
pub mod ensembles;
pub mod error;
pub mod gapref;
pub mod harness;
pub mod mde;
pub mod numfmt;
pub mod spectral;

pub use error::{Error, Result};
pub use harness::seed::{derive_substream, SeededRandomSource, StreamPath};

pub use num_complex::Complex64 as C64;
