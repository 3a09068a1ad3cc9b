//! Numerical laboratory for Hamilton-Jacobi equations with superlinear
//! Hamiltonians and unbounded sources.
//!
//! - [`grid`]: space-time grids, fields, quadrature and CSV I/O
//! - [`hamiltonian`]: power and custom Hamiltonians, Legendre transforms, growth checks
//! - [`hopf_lax`]: backward dynamic programming and subsolution diagnostics
//! - [`characteristics`]: optimal paths and their estimates
//! - [`regularity`]: maximal functions, stopping radii, reverse Hölder and Sobolev scans
//! - [`sharpness`]: the explicit counterexample family
//! - [`mfg`]: variational mean-field-games solver

pub mod error;
pub mod grid;
pub mod hamiltonian;
pub mod characteristics;
pub mod hopf_lax;
pub mod regularity;
pub mod sharpness;
pub mod mfg;

pub use error::{Error, Result};
pub use grid::{Boundary, CubeWindow, GridSpec, ScalarField, VectorField};
pub use hamiltonian::{Coefficient, HamiltonianKind, HamiltonianModel};
