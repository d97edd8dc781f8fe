//! Reference-free partial variances and partial correlations for
//! compositional data.
//!
//! The clr covariance `Γ` of a composition is singular. Its Moore–Penrose
//! pseudoinverse `Γ⁻`, built from the inverse of any alr covariance, gives
//! partial variances `1 / γ⁻_jj` and partial correlations
//! `-γ⁻_ij / sqrt(γ⁻_ii γ⁻_jj)` that treat every part alike. Pairs get
//! permutation-based q-values.
//!
//! ```
//! use coda_pcor::inference::{run_inference, PermutationConfig};
//! use coda_pcor::partial::{AssociationOptions, PartialAssociation};
//! use coda_pcor::synthetic::planted_pair;
//!
//! let x = planted_pair(120, 5, (0, 2), 0.2, 1)?;
//! let assoc = PartialAssociation::estimate(&x, AssociationOptions::default())?;
//! assert!(assoc.partial_corr[(0, 2)] > 0.9);
//!
//! let config = PermutationConfig { n_randomizations: 100, ..Default::default() };
//! let q = run_inference(&x, &config)?;
//! assert!(q.pair(0, 2).unwrap().q.q < 0.05);
//! # Ok::<(), coda_pcor::error::Error>(())
//! ```
//!
//! Modules follow the pipeline: [`composition`] (closure and log-ratio
//! transforms), [`covariance`] (`Σ`, `Γ` and `Γ⁻`), [`partial`] (partial
//! statistics, residuals, R²), [`inference`] (permutation q-values) and
//! [`report`] (CSV ingestion and the two report tables). The guide in
//! `book/` covers the same ground with runnable examples.

pub mod composition;
pub mod covariance;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod partial;
pub mod report;
pub mod selfcheck;
pub mod structural;
pub mod synthetic;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/compositions.md")]
    mod compositions {}
    #[doc = include_str!("../../../book/src/covariance.md")]
    mod covariance {}
    #[doc = include_str!("../../../book/src/partial.md")]
    mod partial {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/glass.md")]
    mod glass {}
}
