//! Hypergraph condensation toolkit.
//!
//! Distills a large attributed hypergraph into a small synthetic one
//! (features, weighted anchor-induced hyperedges, labels) by heat-kernel
//! PageRank initialization, anchor-guided structure generation and a
//! dual-level discrimination objective, then demonstrates utility by training
//! a small HGNN on the condensed data and scoring it on the original test
//! split. The `theory` module checks the underlying spectral, tail-bound,
//! alignment and ranking claims numerically.

pub mod adam;
pub mod artifacts;
pub mod condense;
pub mod config;
pub mod coreset;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod hgnn;
pub mod hypergraph;
pub mod io;
pub mod mat;
pub mod rng;
pub mod sparse;
pub mod standin;
pub mod tape;
pub mod theory;

pub use error::{Error, Result};
