//! Multimodal graph recommendation with ego-neighbor alignment.
//!
//! The pipeline: load and split user-item interactions ([`dataset`]), build
//! the degree-normalized interaction adjacency and frozen per-modality
//! item neighbor graphs ([`graphs`]), propagate per-modality embeddings and
//! fuse them with trainable blend weights ([`model`]), train against a
//! pairwise ranking objective with an ego-neighbor alignment term and
//! hand-derived exact gradients ([`objective`], [`trainer`]), and evaluate
//! top-K recommendation quality ([`eval`]) plus embedding dispersion
//! diagnostics ([`diagnostics`]).
//!
//! Everything is deterministic for a fixed seed: random streams are derived
//! per purpose from one root seed, and parallel kernels accumulate in fixed
//! order.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod graphs;
pub mod io;
pub mod mat;
pub mod model;
pub mod objective;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
