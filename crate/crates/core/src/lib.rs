//! Mixed finite elements for linear elasticity with thin inclusions.
//!
//! The domain is decomposed into a hierarchy of manifolds (bulk regions,
//! inclusion segments and their junction points) coupled through
//! interfaces. Stresses are discretized in `H(div)`-conforming spaces with
//! weakly imposed symmetry, displacements and rotations by discontinuous
//! polynomials.

pub mod assembly;
pub mod config;
pub mod elements;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod mdops;
pub mod meshing;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod verify;

pub use error::{Error, Result};
