//! Layer-aware embedding selection and multi-model embedding fusion for
//! text classification.
//!
//! Per-layer embedding matrices are read from disk ([`store`]), aligned by
//! learnable projections and combined with one of several fusion operators
//! ([`fusion`]), then classified by an MLP head trained with Adam
//! ([`classifier`]). [`experiments`] drives layer sweeps, pairwise fusion
//! grids and multi-model combination sweeps, and renders result tables.

pub mod classifier;
pub mod error;
pub mod experiments;
pub mod fusion;
pub mod numeric;
pub mod seed;
pub mod store;

pub use error::{Error, Result};
