//! Positive-unlabeled risk scoring for public procurement contracts.
//!
//! The crate is organized as a pipeline:
//!
//! * [`domain`]: contract and sanction ingestion, label assignment.
//! * [`redflags`]: contract-level red flags, Benford conformity and the CRI.
//! * [`graph`]: yearly buyer-supplier networks, projections and centralities.
//! * [`featureset`]: feature assembly and missing-value encoding.
//! * [`sampling`]: company-disjoint splits, undersampling, CV folds.
//! * [`pulearn`]: the Hellinger stratified forest, PU bagging and calibration.
//! * [`ranking`]: tie-aware cumulative gain and lift, permutation tests.
//! * [`attribution`]: TreeSHAP attribution and importance reports.
//! * [`synth`]: synthetic procurement data with planted fraud structure.
//! * [`pipeline`]: end-to-end orchestration shared by the CLI and tests.

pub mod attribution;
pub mod domain;
pub mod error;
pub mod featureset;
pub mod graph;
pub mod pipeline;
pub mod pulearn;
pub mod ranking;
pub mod redflags;
pub mod sampling;
pub mod synth;
pub mod util;

pub use error::{Error, Result};
