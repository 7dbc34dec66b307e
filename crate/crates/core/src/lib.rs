//! Finite-element approximation of vectorial infinity-harmonic maps on the
//! square `(-1, 1)^2` through the p-Laplace system with continuation in `p`.

pub mod analysis;
pub mod assembly;
pub mod error;
pub mod fespace;
pub mod io;
pub mod mesh;
pub mod problems;
pub mod quadrature;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result};
