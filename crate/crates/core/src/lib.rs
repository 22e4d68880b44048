//! Exact dual geometry of second-order-cone input convex neural networks.
//!
//! The network output is the optimal value of a parametric conic program, so every optimal
//! multiplier triple yields an affine minorant that touches the network at the query point.
//! This crate builds those multipliers in closed form and reads off gradients,
//! subdifferentials, directional derivatives and local Hessians from them, together with
//! finite-difference oracles that check each readout independently.
//!
//! - [`model`]: parameters, validation, random and degenerate constructions, forward pass.
//! - [`io`]: JSON model documents.
//! - [`dual`]: dual objective, readout map, canonical selector, optimal-set sampling.
//! - [`geometry`]: gradients, subgradient samples, directional derivatives.
//! - [`curvature`]: local affine branch, Hessian and local quadratic diagnostics.
//! - [`oracle`]: finite-difference and convexity oracles.
//! - [`inference`]: strongly convex downstream objective with gradient and Newton solvers.

pub mod curvature;
pub mod dual;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod io;
pub mod model;
pub mod oracle;

pub use error::{Error, Result};
pub use model::{ForwardTrace, SocIcnnParams};

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
