//! Tie-aware ranking evaluation.
//!
//! Predictions are sorted by score, descending. Runs of equal scores form tie
//! blocks; the robust cumulative sum credits a block's positives only once
//! the whole block has been consumed and holds the previous value inside it,
//! so a classifier cannot gain from the arbitrary order of tied rows. Gain
//! and lift compare that curve with the random-guessing baseline `pi * k`.

use std::io::Write;

use rand::seq::{index::sample, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Label, LabeledDataset};
use crate::error::{Error, Result};
use crate::util::{derive_seed, rng};

pub const SCHEMA_VERSION: u32 = 1;

/// Labels and scores sorted by score, descending.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedPredictions {
    pub labels: Vec<bool>,
    pub scores: Vec<f64>,
}

impl RankedPredictions {
    pub fn new(labels: &[bool], scores: &[f64]) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(Error::invalid(format!("{} labels but {} scores", labels.len(), scores.len())));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::data(format!("score at row {i} is not finite")));
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(RankedPredictions {
            labels: order.iter().map(|&i| labels[i]).collect(),
            scores: order.iter().map(|&i| scores[i]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }
}

/// Maximal runs of equal scores in a descending-sorted score list, as
/// half-open rank ranges `[start, end)`.
pub fn tie_groups(sorted_scores: &[f64]) -> Vec<(usize, usize)> {
    let mut groups = Vec::new();
    let mut start = 0;
    for k in 1..=sorted_scores.len() {
        if k == sorted_scores.len() || sorted_scores[k] != sorted_scores[start] {
            groups.push((start, k));
            start = k;
        }
    }
    groups
}

/// Robust cumulative positives `C_R(k)` for k = 1..n (index k-1).
pub fn robust_cumsum(sorted_labels: &[bool], groups: &[(usize, usize)]) -> Result<Vec<u64>> {
    if !sorted_labels.iter().any(|&y| y) {
        return Err(Error::invalid("no known positives"));
    }
    let mut out = vec![0u64; sorted_labels.len()];
    let mut before = 0u64;
    for &(a, b) in groups {
        let block = sorted_labels[a..b].iter().filter(|&&y| y).count() as u64;
        out[a..b - 1].fill(before);
        before += block;
        out[b - 1] = before;
    }
    Ok(out)
}

/// Gain and lift curves with their averages over all ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEvaluation {
    pub n: usize,
    pub positives: usize,
    pub prevalence: f64,
    pub cumsum: Vec<u64>,
    pub gain: Vec<f64>,
    pub lift: Vec<f64>,
    pub avg_gain: f64,
    pub avg_lift: f64,
    pub groups: Vec<(usize, usize)>,
}

impl RankingEvaluation {
    /// Size of the block holding the highest score.
    pub fn top_block_size(&self) -> usize {
        self.groups.first().map(|(a, b)| b - a).unwrap_or(0)
    }

    /// Points at every block end plus up to 1,000 uniformly spaced ranks.
    pub fn curve(&self) -> Vec<CurvePoint> {
        let mut ks: Vec<usize> = self.groups.iter().map(|&(_, b)| b).collect();
        let steps = self.n.min(1000);
        ks.extend((1..=steps).map(|j| (j * self.n).div_ceil(steps)));
        ks.sort_unstable();
        ks.dedup();
        ks.into_iter()
            .map(|k| CurvePoint {
                k,
                cumsum: self.cumsum[k - 1],
                baseline: self.prevalence * k as f64,
                gain: self.gain[k - 1],
                lift: self.lift[k - 1],
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub cumsum: u64,
    pub baseline: f64,
    pub gain: f64,
    pub lift: f64,
}

/// Gain `(C_R(k) - pi k) / P` and lift `C_R(k) / (pi k)` at every rank.
pub fn gain_and_lift(cumsum: Vec<u64>, positives: usize, groups: Vec<(usize, usize)>) -> RankingEvaluation {
    let n = cumsum.len();
    let p = positives as f64;
    let pi = p / n as f64;
    let gain: Vec<f64> = cumsum.iter().enumerate().map(|(i, &c)| (c as f64 - pi * (i + 1) as f64) / p).collect();
    let lift: Vec<f64> = cumsum.iter().enumerate().map(|(i, &c)| c as f64 / (pi * (i + 1) as f64)).collect();
    let avg_gain = gain.iter().sum::<f64>() / n as f64;
    let avg_lift = lift.iter().sum::<f64>() / n as f64;
    RankingEvaluation { n, positives, prevalence: pi, cumsum, gain, lift, avg_gain, avg_lift, groups }
}

/// Full tie-aware evaluation of raw (unsorted) labels and scores.
pub fn evaluate(labels: &[bool], scores: &[f64]) -> Result<RankingEvaluation> {
    let ranked = RankedPredictions::new(labels, scores)?;
    let groups = tie_groups(&ranked.scores);
    let cumsum = robust_cumsum(&ranked.labels, &groups)?;
    Ok(gain_and_lift(cumsum, ranked.positives(), groups))
}

/// Ranks rows by their CRI through the same evaluation as model scores.
pub fn cri_ranking_baseline(cri: &[f64], labels: &[bool]) -> Result<RankingEvaluation> {
    evaluate(labels, cri)
}

/// How permuted labels are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationScheme {
    /// Positive labels move to a random supplier subset of the same size.
    Supplier,
    /// Contract labels are shuffled independently.
    Contract,
}

/// Labels with the positive companies replaced by a uniformly drawn set of
/// equally many suppliers; all rows of a chosen supplier become positive.
pub fn permute_supplier_labels(dataset: &LabeledDataset, seed: u64) -> Vec<Label> {
    let mut suppliers = dataset.suppliers();
    suppliers.sort_unstable();
    let positive: std::collections::HashSet<&str> = dataset
        .contracts
        .iter()
        .zip(&dataset.labels)
        .filter(|(_, l)| l.is_positive())
        .map(|(c, _)| c.supplier_id.as_str())
        .collect();
    let mut r = rng(seed);
    let chosen: std::collections::HashSet<&str> =
        sample(&mut r, suppliers.len(), positive.len()).into_iter().map(|i| suppliers[i].as_str()).collect();
    dataset
        .contracts
        .iter()
        .map(|c| if chosen.contains(c.supplier_id.as_str()) { Label::Positive } else { Label::Unlabeled })
        .collect()
}

/// Labels shuffled across contracts.
pub fn permute_contract_labels(labels: &[Label], seed: u64) -> Vec<Label> {
    let mut out = labels.to_vec();
    out.shuffle(&mut rng(seed));
    out
}

pub fn permuted_labels(dataset: &LabeledDataset, scheme: PermutationScheme, seed: u64) -> Vec<Label> {
    match scheme {
        PermutationScheme::Supplier => permute_supplier_labels(dataset, seed),
        PermutationScheme::Contract => permute_contract_labels(&dataset.labels, seed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub observed_gain: f64,
    pub observed_lift: f64,
    /// (avg_gain, avg_lift) per permutation, in permutation order.
    pub permuted: Vec<(f64, f64)>,
    pub p_gain: f64,
    pub p_lift: f64,
    pub warning: Option<String>,
}

/// `(1 + #{permuted >= observed}) / (B + 1)`.
pub fn permutation_p_value(observed: f64, permuted: &[f64]) -> f64 {
    let at_least = permuted.iter().filter(|&&v| v >= observed).count();
    (1 + at_least) as f64 / (permuted.len() + 1) as f64
}

/// Runs `trial(index, seed)` for every permutation in parallel (each must
/// retrain and evaluate on its own permuted labels) and compares the
/// resulting (avg_gain, avg_lift) with the observed pair.
pub fn permutation_test<F>(observed: (f64, f64), permutations: usize, seed: u64, trial: F) -> Result<PermutationResult>
where
    F: Fn(usize, u64) -> Result<(f64, f64)> + Sync,
{
    let warning = (permutations < 19).then(|| {
        format!("{permutations} permutations cannot reach p <= 0.05; use at least 19")
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let permuted: Vec<(f64, f64)> = (0..permutations)
        .into_par_iter()
        .map(|b| trial(b, derive_seed(seed, b as u64)))
        .collect::<Result<_>>()?;
    let gains: Vec<f64> = permuted.iter().map(|p| p.0).collect();
    let lifts: Vec<f64> = permuted.iter().map(|p| p.1).collect();
    Ok(PermutationResult {
        observed_gain: observed.0,
        observed_lift: observed.1,
        p_gain: permutation_p_value(observed.0, &gains),
        p_lift: permutation_p_value(observed.1, &lifts),
        permuted,
        warning,
    })
}

/// Evaluation report persisted as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub n: usize,
    pub positives: usize,
    pub prevalence: f64,
    pub avg_gain: f64,
    pub avg_lift: f64,
    pub n_tie_groups: usize,
    pub top_block_size: usize,
    pub curve: Vec<CurvePoint>,
    pub permutation: Option<PermutationResult>,
    pub config: serde_json::Value,
}

impl EvaluationReport {
    pub fn new(eval: &RankingEvaluation, permutation: Option<PermutationResult>, config: serde_json::Value) -> Self {
        EvaluationReport {
            schema_version: SCHEMA_VERSION,
            n: eval.n,
            positives: eval.positives,
            prevalence: eval.prevalence,
            avg_gain: eval.avg_gain,
            avg_lift: eval.avg_lift,
            n_tie_groups: eval.groups.len(),
            top_block_size: eval.top_block_size(),
            curve: eval.curve(),
            permutation,
            config,
        }
    }

    pub fn write_curve_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["k", "cumsum", "baseline", "gain", "lift"])?;
        for p in &self.curve {
            w.write_record([
                p.k.to_string(),
                p.cumsum.to_string(),
                p.baseline.to_string(),
                p.gain.to_string(),
                p.lift.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn groups_by_equal_scores() {
        assert_eq!(tie_groups(&[0.9, 0.9, 0.5, 0.1]), vec![(0, 2), (2, 3), (3, 4)]);
        assert_eq!(tie_groups(&[0.3; 4]), vec![(0, 4)]);
        assert_eq!(tie_groups(&[0.4, 0.3, 0.2]).len(), 3);
    }

    #[test]
    fn worked_fixture_with_tie() {
        let e = evaluate(&[true, false, true, false], &[0.9, 0.9, 0.5, 0.1]).unwrap();
        assert_eq!(e.cumsum, vec![0, 1, 2, 2]);
        assert_eq!(e.gain, vec![-0.25, 0.0, 0.25, 0.0]);
        assert_eq!(e.avg_gain, 0.0);
        assert!((e.lift[2] - 4.0 / 3.0).abs() < 1e-15);
        assert!((e.avg_lift - 0.8333333333333334).abs() < 1e-15);
    }

    #[test]
    fn perfect_ranking() {
        let e = evaluate(&[true, true, false, false], &[0.9, 0.8, 0.2, 0.1]).unwrap();
        assert_eq!(e.cumsum, vec![1, 2, 2, 2]);
        assert_eq!(e.avg_gain, 0.25);
        assert!((e.avg_lift - 1.5833333333333333).abs() < 1e-15);
    }

    #[test]
    fn single_block_is_flat_until_the_end() {
        let e = evaluate(&[true, false, true, false], &[0.5; 4]).unwrap();
        assert_eq!(e.cumsum, vec![0, 0, 0, 2]);
        assert!(e.avg_gain < -0.3);
        assert_eq!(e.top_block_size(), 4);
    }

    #[test]
    fn no_positives_is_an_error() {
        let err = evaluate(&[false, false], &[0.1, 0.2]).unwrap_err();
        assert!(err.to_string().contains("no known positives"));
    }

    #[test]
    fn p_value_bounds() {
        assert_eq!(permutation_p_value(0.0, &[1.0; 99]), 1.0);
        assert_eq!(permutation_p_value(2.0, &[1.0; 99]), 0.01);
    }

    #[test]
    fn permutation_runs_in_index_order() {
        let r = permutation_test((0.5, 2.0), 25, 3, |b, _| Ok((b as f64 / 100.0, 1.0))).unwrap();
        assert_eq!(r.permuted[7].0, 0.07);
        assert_eq!(r.p_gain, 1.0 / 26.0);
        assert!(r.warning.is_none());
        let few = permutation_test((0.5, 2.0), 5, 3, |_, _| Ok((0.0, 0.0))).unwrap();
        assert!(few.warning.is_some());
    }

    #[test]
    fn curve_includes_block_ends() {
        let e = evaluate(&[true, false, true, false], &[0.9, 0.9, 0.5, 0.1]).unwrap();
        let ks: Vec<usize> = e.curve().iter().map(|p| p.k).collect();
        assert_eq!(ks, vec![1, 2, 3, 4]);
    }

    fn preds() -> impl Strategy<Value = (Vec<bool>, Vec<f64>)> {
        (1usize..60).prop_flat_map(|n| {
            (prop::collection::vec(any::<bool>(), n), prop::collection::vec(0u8..6, n))
                .prop_filter("needs a positive", |(y, _)| y.iter().any(|&v| v))
                .prop_map(|(y, s)| (y, s.into_iter().map(|v| v as f64 / 5.0).collect()))
        })
    }

    proptest! {
        #[test]
        fn endpoint_invariants((y, s) in preds()) {
            let e = evaluate(&y, &s).unwrap();
            prop_assert_eq!(*e.cumsum.last().unwrap() as usize, e.positives);
            prop_assert!(e.gain.last().unwrap().abs() < 1e-12);
            prop_assert!((e.lift.last().unwrap() - 1.0).abs() < 1e-12);
            prop_assert!(e.cumsum.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn monotone_transform_invariance((y, s) in preds()) {
            let a = evaluate(&y, &s).unwrap();
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            let b = evaluate(&y, &t).unwrap();
            prop_assert_eq!(a.cumsum, b.cumsum);
            prop_assert_eq!(a.avg_gain, b.avg_gain);
        }
    }
}
