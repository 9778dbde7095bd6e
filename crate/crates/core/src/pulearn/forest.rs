//! Hellinger Distance Stratified Random Forest.
//!
//! Every tree sees all labeled positives plus a bootstrap of the unlabeled
//! rows, so the rare positives are never left out of a tree. Trees are grown
//! in parallel with seeds derived from the master seed and the tree index,
//! which makes the forest independent of the worker count.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow_tree, Tree, TreeParams, WeightedRow};
use super::TrainingSet;
use crate::error::{Error, Result};
use crate::featureset::{check_schema, FeatureMatrix};
use crate::util::{derive_seed, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((n_features as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::All => n_features,
            MaxFeatures::Fixed(k) => k.clamp(1, n_features.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HdsrfConfig {
    pub class_prior: f64,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
    /// Unlabeled bootstrap size per tree; `None` uses the unlabeled count.
    pub bootstrap_size: Option<usize>,
    pub seed: u64,
}

impl Default for HdsrfConfig {
    fn default() -> Self {
        HdsrfConfig {
            class_prior: 0.05,
            n_estimators: 1000,
            max_depth: 8,
            max_features: MaxFeatures::Sqrt,
            min_samples_split: 2,
            bootstrap_size: None,
            seed: 42,
        }
    }
}

/// The rows a single tree was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSample {
    pub positives: Vec<usize>,
    /// (matrix row, multiplicity) of the unlabeled bootstrap, by row.
    pub unlabeled: Vec<(usize, u32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub config: HdsrfConfig,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestReport {
    pub n_positive: usize,
    pub n_unlabeled: usize,
    pub bootstrap_size: usize,
    pub max_features: usize,
    pub warnings: Vec<String>,
}

fn bootstrap(unlabeled: &[usize], size: usize, seed: u64) -> Vec<(usize, u32)> {
    let mut counts = vec![0u32; unlabeled.len()];
    let mut r = rng(seed);
    for _ in 0..size {
        counts[r.random_range(0..unlabeled.len())] += 1;
    }
    unlabeled.iter().zip(counts).filter(|(_, c)| *c > 0).map(|(&row, c)| (row, c)).collect()
}

impl Forest {
    pub fn train(x: &FeatureMatrix, set: &TrainingSet, config: &HdsrfConfig) -> Result<(Forest, ForestReport)> {
        let (forest, report, _) = Self::train_inner(x, set, config, false)?;
        Ok((forest, report))
    }

    /// Like [`Self::train`] and also returns each tree's training sample.
    pub fn train_instrumented(
        x: &FeatureMatrix,
        set: &TrainingSet,
        config: &HdsrfConfig,
    ) -> Result<(Forest, ForestReport, Vec<TreeSample>)> {
        Self::train_inner(x, set, config, true)
    }

    fn train_inner(
        x: &FeatureMatrix,
        set: &TrainingSet,
        config: &HdsrfConfig,
        keep_samples: bool,
    ) -> Result<(Forest, ForestReport, Vec<TreeSample>)> {
        let (positives, unlabeled) = set.split()?;
        if !(config.class_prior > 0.0 && config.class_prior < 1.0) {
            return Err(Error::invalid(format!("class prior must lie in (0, 1), got {}", config.class_prior)));
        }
        if config.n_estimators == 0 || config.max_depth == 0 {
            return Err(Error::invalid("forest needs at least one tree of depth >= 1"));
        }
        let mut warnings = Vec::new();
        let observed = positives.len() as f64 / (positives.len() + unlabeled.len()) as f64;
        if config.class_prior <= observed {
            let w = format!(
                "class prior {} does not exceed the observed positive share {observed:.4}",
                config.class_prior
            );
            log::warn!("{w}");
            warnings.push(w);
        }
        let width = x.n_cols();
        let size = config.bootstrap_size.unwrap_or(unlabeled.len()).max(1);
        let params = TreeParams {
            prior: config.class_prior,
            max_depth: config.max_depth,
            min_samples_split: config.min_samples_split as f64,
            max_features: config.max_features.resolve(width),
        };
        let data = x.data();
        let grown: Vec<(Tree, Option<TreeSample>)> = (0..config.n_estimators)
            .into_par_iter()
            .map(|t| {
                let tree_seed = derive_seed(config.seed, t as u64);
                let boot = bootstrap(&unlabeled, size, derive_seed(tree_seed, 0));
                let mut rows: Vec<WeightedRow> =
                    positives.iter().map(|&row| WeightedRow { row, weight: 1.0, positive: true }).collect();
                rows.extend(boot.iter().map(|&(row, c)| WeightedRow { row, weight: c as f64, positive: false }));
                let tree = grow_tree(data, width, rows, &params, &mut rng(derive_seed(tree_seed, 1)));
                let sample = keep_samples.then(|| TreeSample { positives: positives.clone(), unlabeled: boot });
                (tree, sample)
            })
            .collect();
        let (trees, samples): (Vec<Tree>, Vec<Option<TreeSample>>) = grown.into_iter().unzip();
        let report = ForestReport {
            n_positive: positives.len(),
            n_unlabeled: unlabeled.len(),
            bootstrap_size: size,
            max_features: params.max_features,
            warnings,
        };
        let forest = Forest { config: *config, feature_names: x.column_names(), trees };
        Ok((forest, report, samples.into_iter().flatten().collect()))
    }

    /// Mean leaf value across trees for every row of `x`.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        check_schema(&self.feature_names, x)?;
        Ok((0..x.n_rows()).into_par_iter().with_min_len(64).map(|r| self.predict_row(x.row(r))).collect())
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }
}
