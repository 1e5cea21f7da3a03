//! Point-cloud data assimilation for a synthetic ocean.
//!
//! Observations from heterogeneous sources are encoded as unordered point
//! sets, pooled into per-source latents, fused with a latent of the coarse
//! background, and decoded at arbitrary query coordinates into analysis
//! increments on a finer grid.

pub mod analyze;
mod error;
pub mod dataset;
pub mod eval;
pub mod geo;
pub mod io;
pub mod model;
pub mod obs;
pub mod partition;
pub mod seed;
pub mod train;
pub mod world;

pub use error::{Error, Result};
