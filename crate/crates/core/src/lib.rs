//! Differentiable architecture search for token-level sequence labeling.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tape`]), the
//! candidate operations and searchable cell ([`primitives`], [`cell`]), the
//! sequence labeler built from stacked cells ([`model`]), the alternating
//! search loop and genotype derivation ([`search`]), corpus tooling
//! ([`data`]), token-level metrics ([`metrics`]) and a command-line front end
//! ([`cli`]).

pub mod cell;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod primitives;
pub mod rng;
pub mod search;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
