//! Record linkage and post-linkage inference.
//!
//! This crate holds the numerical core: comparison vectors, the
//! Fellegi–Sunter mixture fitted by EM, Bayesian bipartite linkage by Gibbs
//! sampling, weighted estimating-equation estimators for regression on linked
//! data, secondary-analysis mixture models, multiple-imputation pooling and the
//! two simulation scenario generators. It is `no_std` and only needs `alloc`;
//! file formats, the CLI and the parallel experiment runner live in the
//! `reclink` crate.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod assignment;
pub mod bipartite;
pub mod combine;
pub mod comparison;
pub mod error;
pub mod fs;
pub mod linalg;
pub mod math;
pub mod methods;
pub mod metrics;
pub mod mixture;
pub mod records;
pub mod regression;
pub mod rng;
pub mod simgen;
pub mod structure;
pub mod weighting;

pub use error::{Error, Result};
