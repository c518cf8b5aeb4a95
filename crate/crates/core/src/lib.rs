//! Taylor-Hood surface finite elements for the surface Stokes problem on
//! closed quadric surfaces.
//!
//! The velocity space is built from Piola-mapped degree-`r` polynomials whose
//! nodal values are tied together through per-node tangent planes, with edge
//! degrees of freedom at Gauss-Lobatto points. Pressures are continuous
//! mapped Lagrange elements of degree `r - 1`.

pub mod assembly;
pub mod error;
pub mod geometry;
pub mod manufactured;
pub mod mesh;
pub mod postprocess;
pub mod quadrature;
pub mod reference;
pub mod solver;
pub mod spaces;
pub mod study;
pub mod transforms;

pub use error::{Error, Result};
