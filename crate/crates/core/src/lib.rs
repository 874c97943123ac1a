//! Numerical workbench for the J-equation ω_φ^n = C ω_φ^{n−1} ∧ χ on model Kähler
//! geometries: flat tori discretized on periodic grids, and the fibered cusp model
//! near a smooth divisor.
//!
//! Modules:
//! - [`geom_core`]: grids, dd^c, trace/wedge algebra, generalized eigenvalues, Ricci forms.
//! - [`subsolution`]: the pointwise subsolution certificate and the asymptotic deviation.
//! - [`path_solver`]: the two-parameter continuity path solved by damped Newton–Krylov.
//! - [`cusp_model`]: the reduced equation on [A, T] × D, the model operator and its Green's solve.
//! - [`divisor_solver`]: the J-equation on a flat curve (a Poisson problem).
//! - [`functionals`]: energies, entropy and the K-energy decomposition.
//! - [`surface_classes`]: exact intersection arithmetic on surfaces.

pub mod cusp_model;
pub mod divisor_solver;
pub mod error;
pub mod functionals;
pub mod geom_core;
pub mod krylov;
pub mod path_solver;
pub mod subsolution;
pub mod surface_classes;

pub use error::{JeqError, Result};
pub use geom_core::{Grid, HermitianField, Mat, PotentialField};
