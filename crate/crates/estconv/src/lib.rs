//! Convergence laboratory for adaptive mesh refinement.

pub mod axioms;
pub mod bem;
pub mod boundary_mesh;
pub mod concurrency;
pub mod driver;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod marking;
pub mod mesh2d;
pub mod obstacle;
pub mod poisson;
pub mod quadrature;
pub mod refinement;

pub use error::{Error, Result};
