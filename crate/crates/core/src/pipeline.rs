//! End-to-end experiments: company-disjoint and temporal evaluation of the
//! two PU learners against the CRI ranking, and permutation tests.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::domain::{ContractRecord, LabeledDataset, SanctionSet};
use crate::error::{Error, Result};
use crate::featureset::FeatureMatrix;
use crate::graph::CentralityConfig;
use crate::pulearn::{
    CalibratedScorer, Forest, ForestReport, HdsrfConfig, Model, PuBagging, PuBaggingConfig, PuBaggingReport,
    TrainingSet,
};
use crate::ranking::{cri_ranking_baseline, evaluate, permutation_test, PermutationResult, RankingEvaluation};
use crate::sampling::{plan_company_split, temporal_split, SplitConfig, SplitPlan, TemporalSplit};
use crate::util::{derive_seed, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Hdsrf,
    #[serde(alias = "pubag")]
    PuBagging,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub split: SplitConfig,
    pub hdsrf: HdsrfConfig,
    pub pubag: PuBaggingConfig,
    pub centrality: CentralityConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrainReport {
    Hdsrf(ForestReport),
    PuBagging(PuBaggingReport),
}

/// Trains one learner on `rows` of `x` with labels taken from `positive`
/// (a mask over all rows).
pub fn fit(
    kind: ModelKind,
    x: &FeatureMatrix,
    positive: &[bool],
    rows: &[usize],
    cfg: &ExperimentConfig,
) -> Result<(Model, TrainReport)> {
    let set = TrainingSet::from_mask(rows, positive);
    Ok(match kind {
        ModelKind::Hdsrf => {
            let (f, r) = Forest::train(x, &set, &cfg.hdsrf)?;
            (Model::Hdsrf(f), TrainReport::Hdsrf(r))
        }
        ModelKind::PuBagging => {
            let (m, r) = PuBagging::train(x, &set, &cfg.pubag)?;
            (Model::PuBagging(m), TrainReport::PuBagging(r))
        }
    })
}

/// Raw scores of `rows` of `x`.
pub fn score_rows(model: &Model, x: &FeatureMatrix, rows: &[usize]) -> Result<Vec<f64>> {
    model.raw_scores(&x.select_rows(rows))
}

/// Ranking evaluation of `scores` against `positive` restricted to `rows`.
pub fn evaluate_rows(positive: &[bool], rows: &[usize], scores: &[f64]) -> Result<RankingEvaluation> {
    let labels: Vec<bool> = rows.iter().map(|&r| positive[r]).collect();
    evaluate(&labels, scores)
}

/// A trained learner with its scores and evaluation on the held-out rows.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub model: Model,
    pub report: TrainReport,
    pub scores: Vec<f64>,
    pub evaluation: RankingEvaluation,
}

fn run(
    kind: ModelKind,
    x: &FeatureMatrix,
    train_positive: &[bool],
    train_rows: &[usize],
    eval_positive: &[bool],
    eval_rows: &[usize],
    cfg: &ExperimentConfig,
) -> Result<Outcome> {
    let (model, report) = fit(kind, x, train_positive, train_rows, cfg)?;
    let scores = score_rows(&model, x, eval_rows)?;
    let evaluation = evaluate_rows(eval_positive, eval_rows, &scores)?;
    Ok(Outcome { model, report, scores, evaluation })
}

fn cri_on(cri: &[f64], positive: &[bool], rows: &[usize]) -> Result<RankingEvaluation> {
    let c: Vec<f64> = rows.iter().map(|&r| cri[r]).collect();
    let l: Vec<bool> = rows.iter().map(|&r| positive[r]).collect();
    cri_ranking_baseline(&c, &l)
}

/// Company-disjoint comparison of HDSRF, PU bagging and the CRI ranking on
/// the test companies.
#[derive(Debug, Clone)]
pub struct CompanyExperiment {
    pub plan: SplitPlan,
    pub hdsrf: Outcome,
    pub pubag: Outcome,
    pub cri: RankingEvaluation,
    /// Isotonic map fitted on the calibration companies' HDSRF scores.
    pub calibration: CalibratedScorer,
}

pub fn company_experiment(
    dataset: &LabeledDataset,
    x: &FeatureMatrix,
    cri: &[f64],
    cfg: &ExperimentConfig,
) -> Result<CompanyExperiment> {
    let plan = plan_company_split(dataset, &cfg.split)?;
    let positive = dataset.positive_mask();
    let hdsrf = run(ModelKind::Hdsrf, x, &positive, &plan.train_indices, &positive, &plan.test_indices, cfg)?;
    let pubag = run(ModelKind::PuBagging, x, &positive, &plan.train_indices, &positive, &plan.test_indices, cfg)?;
    let cri = cri_on(cri, &positive, &plan.test_indices)?;
    let cal_scores = score_rows(&hdsrf.model, x, &plan.calibration_indices)?;
    let cal_labels: Vec<bool> = plan.calibration_indices.iter().map(|&r| positive[r]).collect();
    let calibration = CalibratedScorer::fit(&cal_scores, &cal_labels);
    Ok(CompanyExperiment { plan, hdsrf, pubag, cri, calibration })
}

/// Supplier-level label permutation that keeps the split intact: on each
/// side of the split the positive suppliers are replaced by a uniform draw of
/// equally many suppliers from that side. Returns a full-length mask.
pub fn permuted_split_labels(dataset: &LabeledDataset, sides: &[&[usize]], seed: u64) -> Vec<bool> {
    let positive = dataset.positive_mask();
    let mut out = vec![false; dataset.len()];
    for (s, rows) in sides.iter().enumerate() {
        let suppliers: BTreeSet<&str> = rows.iter().map(|&r| dataset.contracts[r].supplier_id.as_str()).collect();
        let suppliers: Vec<&str> = suppliers.into_iter().collect();
        let n_pos = rows
            .iter()
            .filter(|&&r| positive[r])
            .map(|&r| dataset.contracts[r].supplier_id.as_str())
            .collect::<BTreeSet<_>>()
            .len();
        let chosen: BTreeSet<&str> = sample(&mut rng(derive_seed(seed, s as u64)), suppliers.len(), n_pos)
            .into_iter()
            .map(|i| suppliers[i])
            .collect();
        for &r in rows.iter() {
            out[r] = chosen.contains(dataset.contracts[r].supplier_id.as_str());
        }
    }
    out
}

/// Permutation test of a learner's test-set (avg_gain, avg_lift): each
/// permutation retrains on permuted training labels and is evaluated on
/// permuted test labels.
#[allow(clippy::too_many_arguments)]
pub fn permutation_experiment(
    kind: ModelKind,
    dataset: &LabeledDataset,
    x: &FeatureMatrix,
    train_rows: &[usize],
    test_rows: &[usize],
    observed: &RankingEvaluation,
    permutations: usize,
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<PermutationResult> {
    permutation_test((observed.avg_gain, observed.avg_lift), permutations, seed, |_, s| {
        let labels = permuted_split_labels(dataset, &[train_rows, test_rows], s);
        let out = run(kind, x, &labels, train_rows, &labels, test_rows, cfg)?;
        Ok((out.evaluation.avg_gain, out.evaluation.avg_lift))
    })
}

/// Inductive comparison: train on earlier years with the sanctions known by
/// the cutoff, evaluate on a later year with every sanction.
#[derive(Debug, Clone)]
pub struct TemporalExperiment {
    pub split: TemporalSplit,
    pub hdsrf: Outcome,
    pub pubag: Outcome,
    pub cri: RankingEvaluation,
}

#[allow(clippy::too_many_arguments)]
pub fn temporal_experiment(
    contracts: &[ContractRecord],
    sanctions: &SanctionSet,
    x: &FeatureMatrix,
    cri: &[f64],
    train_years: &[i32],
    test_year: i32,
    cutoff: i32,
    cfg: &ExperimentConfig,
) -> Result<TemporalExperiment> {
    if x.n_rows() != contracts.len() {
        return Err(Error::invariant("feature matrix rows do not match the contracts"));
    }
    let split = temporal_split(contracts.to_vec(), sanctions, train_years, test_year, cutoff, &cfg.split)?;
    let train_pos = split.train_labels.positive_mask();
    let eval_pos = split.eval_labels.positive_mask();
    let (train, test) = (&split.plan.train_indices, &split.plan.test_indices);
    let hdsrf = run(ModelKind::Hdsrf, x, &train_pos, train, &eval_pos, test, cfg)?;
    let pubag = run(ModelKind::PuBagging, x, &train_pos, train, &eval_pos, test, cfg)?;
    let cri = cri_on(cri, &eval_pos, test)?;
    Ok(TemporalExperiment { split, hdsrf, pubag, cri })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featureset::build_features;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn permutation_keeps_positive_supplier_counts_per_side() {
        let d = generate(&SynthConfig {
            n_buyers: 30,
            n_suppliers: 200,
            contracts_per_year: 600,
            years: 2,
            core_buyers: 5,
            ..Default::default()
        })
        .unwrap()
        .labeled();
        let plan = plan_company_split(&d, &SplitConfig::default()).unwrap();
        let labels = permuted_split_labels(&d, &[&plan.train_indices, &plan.test_indices], 5);
        let count = |mask: &[bool], rows: &[usize]| {
            rows.iter().filter(|&&r| mask[r]).map(|&r| d.contracts[r].supplier_id.clone()).collect::<BTreeSet<_>>().len()
        };
        let orig = d.positive_mask();
        for rows in [&plan.train_indices, &plan.test_indices] {
            assert_eq!(count(&labels, rows), count(&orig, rows));
        }
        assert_ne!(labels, orig);
    }

    #[test]
    fn small_company_experiment_runs() {
        let data = generate(&SynthConfig {
            n_buyers: 40,
            n_suppliers: 300,
            contracts_per_year: 1500,
            years: 2,
            core_buyers: 6,
            ..Default::default()
        })
        .unwrap();
        let d = data.labeled();
        let cfg = ExperimentConfig {
            hdsrf: HdsrfConfig { n_estimators: 20, ..Default::default() },
            pubag: PuBaggingConfig { n_estimators: 10, ..Default::default() },
            ..Default::default()
        };
        let build = build_features(&d, &cfg.centrality).unwrap();
        let exp = company_experiment(&d, &build.matrix, &build.risk.cri, &cfg).unwrap();
        assert_eq!(exp.hdsrf.scores.len(), exp.plan.test_indices.len());
        assert!(exp.hdsrf.evaluation.avg_lift.is_finite());
    }
}
