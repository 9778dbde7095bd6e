//! Hellinger-distance decision trees with a class-prior correction.
//!
//! Unlabeled rows are a mixture of hidden positives and negatives. At each
//! node the share `alpha` of unlabeled mass presumed positive is chosen so the
//! node's positive mass matches the prior: `alpha = clip((pi n - n_P) / n_U)`.
//! Branch masses are then `pos = n_P + alpha n_U` and `neg = (1 - alpha) n_U`.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::util::Rng;

/// Prior-corrected share of unlabeled mass treated as positive.
pub fn mixture_alpha(prior: f64, n_pos: f64, n_unl: f64) -> f64 {
    if n_unl <= 0.0 {
        return 0.0;
    }
    ((prior * (n_pos + n_unl) - n_pos) / n_unl).clamp(0.0, 1.0)
}

/// Hellinger distance between the positive and negative mass distributions
/// over the two branches. Counts are (labeled positive, unlabeled) masses.
pub fn hellinger_from_counts(alpha: f64, left: (f64, f64), right: (f64, f64)) -> f64 {
    let pos_l = left.0 + alpha * left.1;
    let pos_r = right.0 + alpha * right.1;
    let neg_l = (1.0 - alpha) * left.1;
    let neg_r = (1.0 - alpha) * right.1;
    let (pos, neg) = (pos_l + pos_r, neg_l + neg_r);
    if pos <= 0.0 || neg <= 0.0 {
        return 0.0;
    }
    let dl = (pos_l / pos).sqrt() - (neg_l / neg).sqrt();
    let dr = (pos_r / pos).sqrt() - (neg_r / neg).sqrt();
    (dl * dl + dr * dr).sqrt()
}

/// Split score of `threshold` over a node given as (is_positive, value) pairs
/// of unit weight; rows with value <= threshold go left.
pub fn hellinger_split_score(samples: &[(bool, f64)], threshold: f64, prior: f64) -> f64 {
    let (mut left, mut right) = ((0.0, 0.0), (0.0, 0.0));
    for &(pos, v) in samples {
        let side = if v <= threshold { &mut left } else { &mut right };
        if pos {
            side.0 += 1.0;
        } else {
            side.1 += 1.0;
        }
    }
    let alpha = mixture_alpha(prior, left.0 + right.0, left.1 + right.1);
    hellinger_from_counts(alpha, left, right)
}

/// Threshold strictly between two consecutive distinct values such that the
/// lower one goes left and the upper one right.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

pub const LEAF: u32 = u32::MAX;
const MIN_SCORE: f64 = 1e-12;

/// One node in a tree's flat node array. Rows with `x[feature] <= threshold`
/// descend to `left`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    /// Positive-mass fraction; the prediction at leaves.
    pub value: f64,
    /// Training mass (bootstrap multiplicities) reaching the node.
    pub cover: f64,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut k = 0;
        loop {
            let n = &self.nodes[k];
            if n.is_leaf() {
                return k;
            }
            k = if x[n.feature as usize] <= n.threshold { n.left } else { n.right } as usize;
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_index(x)].value
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, k: usize) -> usize {
            let n = &t.nodes[k];
            if n.is_leaf() {
                0
            } else {
                1 + go(t, n.left as usize).max(go(t, n.right as usize))
            }
        }
        go(self, 0)
    }

    /// Features used by any split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self.nodes.iter().filter(|n| !n.is_leaf()).map(|n| n.feature as usize).collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

/// A weighted training row: matrix row, multiplicity, label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedRow {
    pub row: usize,
    pub weight: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub prior: f64,
    pub max_depth: usize,
    pub min_samples_split: f64,
    pub max_features: usize,
}

/// Best split of a node: (feature, threshold, score).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub score: f64,
}

fn masses(rows: &[WeightedRow]) -> (f64, f64) {
    rows.iter().fold((0.0, 0.0), |(p, u), r| if r.positive { (p + r.weight, u) } else { (p, u + r.weight) })
}

/// Highest-scoring split over `features` (scanned in the given order, so pass
/// them ascending for lowest-index tie-breaking); thresholds are midpoints
/// between consecutive distinct values, scanned ascending. Scores within
/// rounding of zero do not qualify.
pub fn best_split(
    data: &[f64],
    width: usize,
    rows: &[WeightedRow],
    features: &[usize],
    prior: f64,
) -> Option<Split> {
    let (n_pos, n_unl) = masses(rows);
    let alpha = mixture_alpha(prior, n_pos, n_unl);
    let mut best: Option<Split> = None;
    let mut vals: Vec<(f64, f64, bool)> = Vec::with_capacity(rows.len());
    for &f in features {
        vals.clear();
        vals.extend(rows.iter().map(|r| (data[r.row * width + f], r.weight, r.positive)));
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (mut lp, mut lu) = (0.0, 0.0);
        for i in 0..vals.len() - 1 {
            let (v, w, pos) = vals[i];
            if pos {
                lp += w;
            } else {
                lu += w;
            }
            let next = vals[i + 1].0;
            if next == v {
                continue;
            }
            let score = hellinger_from_counts(alpha, (lp, lu), (n_pos - lp, n_unl - lu));
            if score > best.map_or(MIN_SCORE, |b| b.score) {
                best = Some(Split { feature: f, threshold: midpoint(v, next), score });
            }
        }
    }
    best
}

/// Grows one tree over `rows`, drawing `max_features` candidate features per
/// node from `rng`.
pub fn grow_tree(data: &[f64], width: usize, rows: Vec<WeightedRow>, params: &TreeParams, rng: &mut Rng) -> Tree {
    let mut nodes = Vec::new();
    let (p, u) = masses(&rows);
    let root_value = leaf_value(p, u, mixture_alpha(params.prior, p, u));
    grow(data, width, rows, root_value, 0, params, rng, &mut nodes);
    Tree { nodes }
}

fn leaf_value(pos: f64, unl: f64, alpha: f64) -> f64 {
    let total = pos + unl;
    if total <= 0.0 {
        0.0
    } else {
        ((pos + alpha * unl) / total).clamp(0.0, 1.0)
    }
}

#[allow(clippy::too_many_arguments)]
fn grow(
    data: &[f64],
    width: usize,
    rows: Vec<WeightedRow>,
    value: f64,
    depth: usize,
    params: &TreeParams,
    rng: &mut Rng,
    nodes: &mut Vec<Node>,
) -> u32 {
    let id = nodes.len() as u32;
    let (n_pos, n_unl) = masses(&rows);
    nodes.push(Node { feature: LEAF, threshold: 0.0, left: LEAF, right: LEAF, value, cover: n_pos + n_unl });
    if depth >= params.max_depth || n_pos + n_unl < params.min_samples_split || rows.len() < 2 {
        return id;
    }
    let k = params.max_features.clamp(1, width);
    let mut features = sample(rng, width, k).into_vec();
    features.sort_unstable();
    let Some(split) = best_split(data, width, &rows, &features, params.prior) else {
        return id;
    };
    let alpha = mixture_alpha(params.prior, n_pos, n_unl);
    let (left_rows, right_rows): (Vec<WeightedRow>, Vec<WeightedRow>) =
        rows.into_iter().partition(|r| data[r.row * width + split.feature] <= split.threshold);
    let (lp, lu) = masses(&left_rows);
    let (rp, ru) = masses(&right_rows);
    let left = grow(data, width, left_rows, leaf_value(lp, lu, alpha), depth + 1, params, rng, nodes);
    let right = grow(data, width, right_rows, leaf_value(rp, ru, alpha), depth + 1, params, rng, nodes);
    let node = &mut nodes[id as usize];
    node.feature = split.feature as u32;
    node.threshold = split.threshold;
    node.left = left;
    node.right = right;
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng;

    #[test]
    fn worked_split_score() {
        let s = [(true, 1.0), (false, 2.0), (false, 3.0), (false, 4.0)];
        let score = hellinger_split_score(&s, 1.5, 0.5);
        let expected = (0.5 + (0.5f64.sqrt() - 1.0).powi(2)).sqrt();
        assert!((score - expected).abs() < 1e-15);
        assert!((score - 0.76537).abs() < 1e-5);
    }

    #[test]
    fn identical_composition_scores_zero() {
        let s = [(true, 1.0), (false, 1.0), (true, 2.0), (false, 2.0)];
        assert!(hellinger_split_score(&s, 1.5, 0.3).abs() < 1e-15);
    }

    #[test]
    fn perfect_separation_without_mixture() {
        assert!((hellinger_from_counts(0.0, (3.0, 0.0), (0.0, 5.0)) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn midpoint_separates_adjacent_floats() {
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let t = midpoint(lo, hi);
        assert!(lo <= t && t < hi);
        assert_eq!(midpoint(1.0, 2.0), 1.5);
    }

    #[test]
    fn stump_splits_on_informative_feature() {
        // Feature 1 separates positives; feature 0 is constant.
        let data = [0.0, 1.0, 0.0, 1.0, 0.0, 5.0, 0.0, 6.0];
        let rows: Vec<WeightedRow> = (0..4).map(|r| WeightedRow { row: r, weight: 1.0, positive: r < 2 }).collect();
        let params = TreeParams { prior: 0.5, max_depth: 1, min_samples_split: 2.0, max_features: 2 };
        let t = grow_tree(&data, 2, rows, &params, &mut rng(1));
        assert_eq!(t.nodes[0].feature, 1);
        assert_eq!(t.nodes[0].threshold, 3.0);
        assert_eq!(t.predict(&[0.0, 1.0]), 1.0);
        assert_eq!(t.predict(&[0.0, 6.0]), 0.0);
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn pure_node_stays_a_leaf() {
        let data = [1.0, 2.0, 3.0];
        let rows: Vec<WeightedRow> = (0..3).map(|r| WeightedRow { row: r, weight: 1.0, positive: false }).collect();
        let params = TreeParams { prior: 0.1, max_depth: 8, min_samples_split: 2.0, max_features: 1 };
        let t = grow_tree(&data, 1, rows, &params, &mut rng(1));
        assert_eq!(t.nodes.len(), 1);
    }
}
