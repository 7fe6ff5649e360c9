//! Spectral debiasing of concept embeddings.
//!
//! The pipeline: load a concept space ([`category`]), fit a row-orthonormal
//! projection that collapses protected-group differences ([`spectral`]),
//! ground candidate distributions through fairness-aware retrieval
//! ([`retrieval`]), and score the result ([`metrics`], [`validation`]).

pub mod category;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod retrieval;
pub mod spectral;
pub mod validation;
pub mod workspace;

pub use error::{Error, Result};
