//! Shared autoregressive behavioral states across a population of
//! multivariate time series.
//!
//! A beta-process autoregressive HMM places every series in one global
//! vocabulary of vector-autoregressive regimes. Each series uses a subset of
//! those regimes (a row of the binary feature matrix) and owns a private
//! transition matrix over that subset. Once fitted, the per-series HMMs are
//! turned into pairwise distances, stationary and spectral embeddings,
//! hierarchical clusters and leave-one-out construct predictions.
//!
//! The crate is `no_std` + `alloc`. File formats and the command-line front
//! end live in the companion `bpar` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod cluster;
pub mod data;
pub mod distance;
pub mod embedding;
mod error;
pub mod math;
pub mod model;
mod par;
pub mod predict;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
