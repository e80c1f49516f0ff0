//! Surface finite elements for the unsteady incompressible Navier-Stokes
//! equations on closed surfaces.
//!
//! Velocities are continuous Lagrange elements of degree `k_u` on a curved
//! triangulation of geometric degree `k_g`, pressures are of degree `k_u - 1`
//! (Taylor-Hood), and tangentiality is enforced weakly by a scalar Lagrange
//! multiplier of degree `k_lambda` or by a penalty term. Time stepping is
//! backward Euler with convection frozen at the previous step.

pub mod analysis;
pub mod assembly;
pub mod basis;
pub mod error;
pub mod fespace;
pub mod geometry;
pub mod mesh;
pub mod problems;
pub mod solver;
pub mod sparse;
pub mod study;

pub use error::{Error, Result};
pub use fespace::FeSpace;
pub use geometry::{Mat3, Surface, Vec3};
pub use sparse::CsrMatrix;
