//! Truncated Carleman linearization of a 1D Burgers-type equation with a
//! destabilizing linear term, discretized by P1 finite elements on dyadic
//! meshes, with full and sparse-grid (combination technique) tensor
//! discretizations of the moment hierarchy.

pub mod error;
pub mod fem1d;
pub mod tensor;
pub mod sparse;
pub mod carleman;
pub mod solver;
pub mod reference;
pub mod experiment;

pub use error::{Error, Result};
