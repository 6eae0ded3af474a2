//! Numerics for stretched necks on a mode-decoupled 1-D model.
//!
//! The cross-section enters only through its form-Laplacian spectrum. Every
//! operator on the cylinder splits into one ODE per cross-section eigenmode,
//! and the modules below work mode by mode: right inverses on the neck,
//! polyhomogeneous pairings, glued operators, the gluing solver and the
//! low-eigenvalue counting laws.

pub mod checks;
pub mod error;
pub mod experiments;
pub mod glued_model;
pub mod gluing_solver;
pub mod neck_inverse;
pub mod output;
pub mod polyhom_calculus;
pub mod quadrature;
pub mod rng;
pub mod spectral_density;
pub mod spectral_model;
pub mod tridiag;

pub use error::{Error, Result};
