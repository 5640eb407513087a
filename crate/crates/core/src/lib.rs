//! Controlled variable selection with hierarchical locally connected networks.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`nn`]: a small dense / locally connected network engine with exact
//!   parameter and input gradients, Adam and the MSE/BCE losses.
//! * [`knockoff`]: sequential conditional generation of multiple knockoff
//!   copies and exchangeability diagnostics.
//! * [`filter`]: importance matrices, the κ/τ/W statistics, single and
//!   multiple knockoff thresholds and knockoff q-values.
//! * [`model`]: HiDe-MK / De-MK architectures, training, epoch selection,
//!   cross-validated search and median-of-runs ensembling.
//! * [`sim`]: LD-structured genotype and trait simulation.
//! * [`baselines`]: marginal Wald tests, lasso and ridge with a single knockoff.
//! * [`harness`]: replicate orchestration and FDR/power curves.

pub mod baselines;
pub mod error;
pub mod filter;
pub mod harness;
pub mod io;
pub mod knockoff;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod seed;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
