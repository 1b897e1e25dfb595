//! Numerical laboratory for adiabatic transitions in finite-level quantum
//! systems.
//!
//! The library integrates the rescaled Schrödinger equation
//! `iε ∂U/∂t = H(t) U` for small hermitian families `H(t)` (n ≤ 8), follows
//! instantaneous eigenframes along real and complex time, and measures how
//! transition probabilities across a spectral gap decay as ε → 0:
//!
//! * exact propagation and coefficient traces in the instantaneous basis,
//! * complex crossing points of analytically continued eigenvalues, loop
//!   integrals and geometric prefactors that govern exponential decay laws,
//! * superadiabatic renormalization of the spectral projectors, with optimal
//!   truncation giving exponentially accurate effective dynamics.
//!
//! Everything is deterministic: fixed pivot orders, fixed quadrature ladders,
//! and explicit phase conventions, so identical inputs give identical bytes.

// Argument guards are written `!(x > 0.0)` on purpose: the negated form
// rejects NaN along with the out-of-range values, `x <= 0.0` does not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod cli;
pub mod complexplane;
pub mod error;
pub mod linalg;
pub mod models;
pub mod propagator;
pub mod spectral;
pub mod superadiabatic;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex<f64>;

/// Dense complex matrix (all Hamiltonians here are n ≤ 8).
pub type CMat = nalgebra::DMatrix<C64>;

/// Dense complex vector.
pub type CVec = nalgebra::DVector<C64>;
