//! Nested-lattice coding of linear functions of correlated Gaussian sources.
//!
//! The crate covers lattice primitives, jointly Gaussian covariance algebra,
//! closed-form rate regions for lattice binning and the Berger-Tung scheme,
//! and a Monte Carlo simulator of the actual encode/decode pipelines.

pub mod cli;
pub mod codec;
pub mod entropy;
pub mod error;
pub mod gauss;
pub mod lattice;
pub mod nested;
pub mod regions;
pub mod sweep;

pub use error::{Error, Result};
pub use gauss::{PartitionPlan, SourceModel};
pub use lattice::Lattice;
