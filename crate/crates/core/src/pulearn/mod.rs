//! Positive-unlabeled learners and score calibration.

mod calibrate;
mod forest;
mod persist;
mod pubag;
mod tree;

pub use calibrate::{isotonic_fit, CalibratedScorer};
pub use forest::{Forest, ForestReport, HdsrfConfig, MaxFeatures, TreeSample};
pub use persist::{Model, ModelFile, MODEL_FORMAT_VERSION};
pub use pubag::{
    hinge_sgd, rbf_kernel, Aggregation, Estimator, PuBagging, PuBaggingConfig, PuBaggingReport, RffMap, ScoreMode, SgdConfig,
    Standardizer, TransductiveScores,
};
pub use tree::{
    best_split, grow_tree, hellinger_from_counts, hellinger_split_score, midpoint, mixture_alpha, Node, Split, Tree,
    TreeParams, WeightedRow, LEAF,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training rows of a feature matrix with their PU labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSet {
    /// Matrix row indices.
    pub rows: Vec<usize>,
    /// Labeled-positive flag for each entry of `rows`.
    pub positive: Vec<bool>,
}

impl TrainingSet {
    pub fn new(rows: Vec<usize>, positive: Vec<bool>) -> Self {
        assert_eq!(rows.len(), positive.len(), "one label per training row");
        TrainingSet { rows, positive }
    }

    /// Selects `rows` from a full-length label mask.
    pub fn from_mask(rows: &[usize], mask: &[bool]) -> Self {
        TrainingSet { rows: rows.to_vec(), positive: rows.iter().map(|&r| mask[r]).collect() }
    }

    /// (positive rows, unlabeled rows); errors unless both are nonempty.
    pub fn split(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut pos = Vec::new();
        let mut unl = Vec::new();
        for (&r, &p) in self.rows.iter().zip(&self.positive) {
            if p {
                pos.push(r);
            } else {
                unl.push(r);
            }
        }
        if pos.is_empty() {
            return Err(Error::invalid("PU training requires at least one positive row"));
        }
        if unl.is_empty() {
            return Err(Error::invalid("PU training requires at least one unlabeled row"));
        }
        Ok((pos, unl))
    }
}
