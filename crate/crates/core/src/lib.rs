//! Dimension-independent likelihood-informed MCMC on whitened function spaces.
//!
//! The pieces, bottom up: [`prior`] whitens parameters against a Gaussian
//! prior, [`model`] wraps a forward map with its tangent and adjoint,
//! [`lowrank`] maintains the likelihood-informed subspace, [`proposals`]
//! builds operator-weighted proposals and their acceptance ratios, and
//! [`samplers`] runs the adaptive chains. [`problems`] holds the benchmark
//! models and [`experiment`] glues everything to config files and outputs.

pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod lowrank;
pub mod model;
pub mod prior;
pub mod problems;
pub mod proposals;
pub mod samplers;

pub use error::{Error, Result};
