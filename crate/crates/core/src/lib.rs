//! Numerical tools for the mixed Dirichlet-Neumann p-Laplace problem on the half-cylinder
//! `G = B' x (0, inf)` and its transformation to a weighted Dirichlet problem on the
//! punctured unit ball.

pub mod capacity;
pub mod error;
pub mod geometry;
pub mod mesh;
pub mod operator;
pub mod solver;
pub mod transform;
pub mod wiener;

pub use error::{Error, Result};
