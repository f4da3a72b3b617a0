//! Mixed finite elements for the channel Stokes and Navier-Stokes problems
//! with mixed Dirichlet / do-nothing boundary conditions.

// NaN-rejecting `!(x > 0.0)` checks and index loops over coupled arrays are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod basis;
pub mod corner;
pub mod eigen;
pub mod error;
pub mod evolution;
pub mod fem;
pub mod io;
pub mod mesh;
pub mod navier_stokes;
pub mod quadrature;
pub mod sparse;

pub use error::{Error, Result};
