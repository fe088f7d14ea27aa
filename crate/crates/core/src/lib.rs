//! Numerical toolkit for sequences of local diffeomorphisms with candidate
//! expanding/contracting splittings: cocycle diagnostics (effective rates,
//! effective hyperbolic times, non-uniformity constants), the graph
//! transform on discretized admissible manifolds with explicit parameter
//! recursions, local unstable manifolds as backward fixed points, and a
//! finite-information closing procedure for locating hyperbolic periodic
//! points.
//!
//! The runnable examples under `examples/` demonstrate one capability each;
//! the `hypkit` binary drives the same pipelines from JSON run
//! configurations.

pub mod admissible;
pub mod catalog;
pub mod cheb;
pub mod cli;
pub mod closing;
pub mod descriptor;
pub mod diagnostics;
pub mod error;
pub mod germ;
pub mod linalg;
pub mod rates;
pub mod report;
pub mod transform;

pub use error::{Error, Result};
