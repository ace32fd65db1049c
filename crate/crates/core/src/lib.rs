//! Mass-matrix-free continuous finite element solver for the linear
//! transport equation `du/dt + div(a(x) u) = 0` on 1D and 2D simplicial
//! meshes.
//!
//! The spatial discretization offers SUPG and Galerkin plus gradient-jump
//! stabilizations over linear Lagrange or quadratic Bernstein elements. Time
//! marching uses a deferred-correction scheme whose only linear-algebra
//! operation is division by positive lumped coefficients, so no mass matrix
//! is ever inverted in the production path. A consistent-mass Runge-Kutta
//! reference integrator backed by a CG solver is included for validation.
//!
//! Everything numerical is generic over the scalar type through [`Real`];
//! the `f64` instantiations used by the command-line driver are aliased at
//! the crate root.

pub mod dec;
pub mod driver;
pub mod error;
pub mod mesh;
pub mod oracle;
pub mod quadrature;
pub mod residual;
pub mod scalar;
pub mod space;

pub use error::{Error, Result};
pub use scalar::{Real, Vec2};

/// Default scalar for the driver and the shipped binaries.
pub type Scalar = f64;

/// 2D mesh with `f64` coordinates.
pub type MeshF64 = mesh::Mesh<f64>;
