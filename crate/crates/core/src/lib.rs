//! Tokamak plasma equilibrium reconstruction.
//!
//! A P1 finite-element Grad-Shafranov solve is alternated with a regularized
//! least-squares identification of the profile functions `A`, `B` and `n_e`
//! from magnetic, polarimetric, interferometric and plasma-current data.

pub mod basis;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod mesh;
pub mod observations;
pub mod output;
pub mod profiles;
pub mod reconstruction;
pub mod sparse;
pub mod twin;

pub use error::{Error, Result};
pub use mesh::{Mesh, Point, PsiField};

/// Vacuum permeability (H/m).
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;
