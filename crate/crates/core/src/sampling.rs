//! Company-disjoint splits.
//!
//! Suppliers, not contracts, are the sampling unit: every contract of a
//! supplier lands on the same side of a train/test or fold boundary. Within
//! the training side, the heaviest suppliers are undersampled to a cap so a
//! few large companies cannot dominate bootstrap samples; test and
//! calibration rows are never touched.

use std::collections::BTreeMap;

use rand::seq::{index::sample, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::domain::{apply_labels, apply_labels_with_cutoff, ContractRecord, Label, LabeledDataset, SanctionSet};
use crate::error::{Error, Result};
use crate::util::{derive_seed, quantile, rng};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub test_fraction: f64,
    /// Suppliers above the `1 - top_fraction` quantile of contract counts are undersampled.
    pub top_fraction: f64,
    /// Quantile of per-supplier counts whose ceiling is the retained cap.
    pub cap_quantile: f64,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { test_fraction: 0.30, top_fraction: 0.05, cap_quantile: 0.95, folds: 4, seed: 42 }
    }
}

/// Row-index partition of a dataset plus everything needed to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub schema_version: u32,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub calibration_indices: Vec<usize>,
    /// Fold id (1-based) of each training company.
    pub fold_assignment: BTreeMap<String, usize>,
    pub undersample_cap: usize,
    /// Suppliers whose training rows were subsampled to the cap.
    pub undersampled_suppliers: Vec<String>,
    /// Training rows before undersampling.
    pub train_rows_before_undersampling: usize,
    pub seed: u64,
    pub config: SplitConfig,
    pub dataset_hash: String,
}

impl SplitPlan {
    /// Rows to train on and rows to evaluate on for one CV fold. Training
    /// excludes every company of the fold; evaluation uses the fold's
    /// companies' rows as they are in the dataset, without undersampling.
    pub fn fold_rows(&self, dataset: &LabeledDataset, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let in_fold = |i: usize| self.fold_assignment.get(&dataset.contracts[i].supplier_id) == Some(&fold);
        let train = self.train_indices.iter().copied().filter(|&i| !in_fold(i)).collect();
        let eval = (0..dataset.len()).filter(|&i| in_fold(i)).collect();
        (train, eval)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Distinct supplier ids, sorted, so splits do not depend on row order.
fn sorted_suppliers(contracts: &[ContractRecord]) -> Vec<String> {
    let mut ids: Vec<String> = contracts.iter().map(|c| c.supplier_id.clone()).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Uniform random partition of supplier ids into (train, test). The test
/// side gets `round(n * test_fraction)` suppliers, at least 1 and at most
/// `n - 1`. Both lists are returned sorted.
pub fn company_split(dataset: &LabeledDataset, test_fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test_fraction must lie in (0, 1), got {test_fraction}")));
    }
    let mut ids = sorted_suppliers(&dataset.contracts);
    let n = ids.len();
    if n < 2 {
        return Err(Error::invalid(format!("a company split needs at least 2 suppliers, found {n}")));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    ids.shuffle(&mut rng(derive_seed(seed, 1)));
    let mut test = ids.split_off(n - n_test);
    ids.sort_unstable();
    test.sort_unstable();
    Ok((ids, test))
}

/// Assigns companies to `k` CV folds (ids 1..=k) and a calibration group of
/// near-equal size; returns (fold assignment, calibration companies).
pub fn cv_folds(companies: &[String], k: usize, seed: u64) -> Result<(BTreeMap<String, usize>, Vec<String>)> {
    if k < 2 {
        return Err(Error::invalid(format!("cross-validation needs k >= 2, got {k}")));
    }
    let groups = k + 1;
    if companies.len() < groups {
        return Err(Error::invalid(format!(
            "{} companies cannot fill {k} folds plus a calibration group",
            companies.len()
        )));
    }
    let mut ids = companies.to_vec();
    ids.sort_unstable();
    ids.shuffle(&mut rng(derive_seed(seed, 2)));
    let (base, extra) = (ids.len() / groups, ids.len() % groups);
    let mut assignment = BTreeMap::new();
    let mut calibration = Vec::new();
    let mut start = 0;
    for g in 0..groups {
        let size = base + usize::from(g < extra);
        for id in &ids[start..start + size] {
            if g == k {
                calibration.push(id.clone());
            } else {
                assignment.insert(id.clone(), g + 1);
            }
        }
        start += size;
    }
    calibration.sort_unstable();
    Ok((assignment, calibration))
}

/// Outcome of undersampling a set of training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Undersampled {
    pub rows: Vec<usize>,
    pub cap: usize,
    pub affected: Vec<String>,
}

/// Caps the heaviest suppliers' rows. Suppliers whose count exceeds the
/// `1 - top_fraction` quantile of per-supplier counts keep a uniform sample
/// of `ceil(quantile(cap_quantile))` rows; the rest keep everything.
pub fn undersample_top(
    dataset: &LabeledDataset,
    rows: &[usize],
    top_fraction: f64,
    cap_quantile: f64,
    seed: u64,
) -> Undersampled {
    let mut by_supplier: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in rows {
        by_supplier.entry(dataset.contracts[i].supplier_id.as_str()).or_default().push(i);
    }
    if by_supplier.is_empty() {
        return Undersampled { rows: Vec::new(), cap: 0, affected: Vec::new() };
    }
    let counts: Vec<f64> = by_supplier.values().map(|v| v.len() as f64).collect();
    let top_threshold = quantile(&counts, 1.0 - top_fraction);
    let cap = (quantile(&counts, cap_quantile).ceil() as usize).max(1);
    let mut kept = Vec::with_capacity(rows.len());
    let mut affected = Vec::new();
    for (k, (id, idx)) in by_supplier.into_iter().enumerate() {
        if idx.len() as f64 > top_threshold && idx.len() > cap {
            let mut r = rng(derive_seed(seed, 1000 + k as u64));
            kept.extend(sample(&mut r, idx.len(), cap).into_iter().map(|j| idx[j]));
            affected.push(id.to_string());
        } else {
            kept.extend(idx);
        }
    }
    kept.sort_unstable();
    Undersampled { rows: kept, cap, affected }
}

fn rows_of(dataset: &LabeledDataset, keep: impl Fn(&str) -> bool) -> Vec<usize> {
    (0..dataset.len()).filter(|&i| keep(&dataset.contracts[i].supplier_id)).collect()
}

/// Company split, CV folds with a calibration group, and undersampling of
/// the CV training rows.
pub fn plan_company_split(dataset: &LabeledDataset, config: &SplitConfig) -> Result<SplitPlan> {
    let (train_companies, test_companies) = company_split(dataset, config.test_fraction, config.seed)?;
    let (folds, calibration) = cv_folds(&train_companies, config.folds, config.seed)?;
    let test_rows = rows_of(dataset, |s| test_companies.binary_search_by(|t| t.as_str().cmp(s)).is_ok());
    let calibration_rows = rows_of(dataset, |s| calibration.binary_search_by(|t| t.as_str().cmp(s)).is_ok());
    let train_rows = rows_of(dataset, |s| folds.contains_key(s));
    let under = undersample_top(dataset, &train_rows, config.top_fraction, config.cap_quantile, derive_seed(config.seed, 3));
    Ok(SplitPlan {
        schema_version: SCHEMA_VERSION,
        train_indices: under.rows,
        test_indices: test_rows,
        calibration_indices: calibration_rows,
        fold_assignment: folds,
        undersample_cap: under.cap,
        undersampled_suppliers: under.affected,
        train_rows_before_undersampling: train_rows.len(),
        seed: config.seed,
        config: *config,
        dataset_hash: dataset.content_hash(),
    })
}

/// An inductive split: train on earlier years with labels restricted to
/// sanctions known by the cutoff, evaluate on a later year with all labels.
#[derive(Debug, Clone)]
pub struct TemporalSplit {
    pub plan: SplitPlan,
    /// Labels visible to training (sanctions up to the cutoff), all rows.
    pub train_labels: LabeledDataset,
    /// Labels using every sanction, for evaluation only.
    pub eval_labels: LabeledDataset,
}

pub fn temporal_split(
    contracts: Vec<ContractRecord>,
    sanctions: &SanctionSet,
    train_years: &[i32],
    test_year: i32,
    sanction_cutoff: i32,
    config: &SplitConfig,
) -> Result<TemporalSplit> {
    if train_years.is_empty() {
        return Err(Error::invalid("temporal split needs at least one training year"));
    }
    if train_years.contains(&test_year) {
        return Err(Error::invalid(format!("test year {test_year} is also a training year")));
    }
    let max_train = *train_years.iter().max().unwrap();
    if sanction_cutoff > max_train {
        return Err(Error::invalid(format!(
            "sanction cutoff {sanction_cutoff} is later than the last training year {max_train}"
        )));
    }
    let eval_labels = apply_labels(contracts.clone(), sanctions);
    let train_labels = apply_labels_with_cutoff(contracts, sanctions, sanction_cutoff);
    let test_rows: Vec<usize> = eval_labels.year_index.get(&test_year).cloned().unwrap_or_default();
    if test_rows.is_empty() {
        return Err(Error::invalid(format!("test year {test_year} has no contracts")));
    }
    let mut train_rows: Vec<usize> =
        train_years.iter().flat_map(|y| eval_labels.year_index.get(y).cloned().unwrap_or_default()).collect();
    train_rows.sort_unstable();
    let under = undersample_top(&train_labels, &train_rows, config.top_fraction, config.cap_quantile, derive_seed(config.seed, 3));
    let plan = SplitPlan {
        schema_version: SCHEMA_VERSION,
        train_indices: under.rows,
        test_indices: test_rows,
        calibration_indices: Vec::new(),
        fold_assignment: BTreeMap::new(),
        undersample_cap: under.cap,
        undersampled_suppliers: under.affected,
        train_rows_before_undersampling: train_rows.len(),
        seed: config.seed,
        config: *config,
        dataset_hash: train_labels.content_hash(),
    };
    Ok(TemporalSplit { plan, train_labels, eval_labels })
}

/// Labels restricted to a row subset, in the given order.
pub fn labels_of(dataset: &LabeledDataset, rows: &[usize]) -> Vec<Label> {
    rows.iter().map(|&i| dataset.labels[i]).collect()
}
