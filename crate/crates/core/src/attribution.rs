//! Exact Shapley attribution for forest scores.
//!
//! Path-dependent TreeSHAP: the value of a feature coalition at a node whose
//! split feature is outside the coalition is the cover-weighted average of
//! both children, so the training sample acts as the background through node
//! covers. Forest attributions are the mean of per-tree attributions, matching
//! the forest's mean-of-trees score.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::featureset::{check_schema, display_name, FeatureMatrix, SCHEMA_VERSION};
use crate::pulearn::{Forest, Tree};
use crate::util::{pearson, quantile_sorted};

/// Attributions for a set of rows, row-major `n_rows x n_features`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapMatrix {
    pub feature_names: Vec<String>,
    /// Matrix row index of each attributed row.
    pub rows: Vec<usize>,
    pub values: Vec<f64>,
    /// Expected forest score under the cover-weighted background.
    pub base_value: f64,
    /// Forest score of each attributed row.
    pub scores: Vec<f64>,
}

impl ShapMatrix {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.n_features();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn column(&self, f: usize) -> Vec<f64> {
        (0..self.rows.len()).map(|i| self.row(i)[f]).collect()
    }

    /// Largest `|base + sum(phi) - score|` over rows.
    pub fn max_local_accuracy_error(&self) -> f64 {
        (0..self.rows.len())
            .map(|i| (self.base_value + self.row(i).iter().sum::<f64>() - self.scores[i]).abs())
            .fold(0.0, f64::max)
    }

    /// CSV with a `row` column followed by one column per feature.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["row".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec = vec![r.to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: i64,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

fn extend_path(path: &mut [PathElement], depth: usize, zero_fraction: f64, one_fraction: f64, feature: i64) {
    path[depth] = PathElement { feature, zero_fraction, one_fraction, weight: if depth == 0 { 1.0 } else { 0.0 } };
    let d = depth as f64;
    for i in (0..depth).rev() {
        path[i + 1].weight += one_fraction * path[i].weight * (i as f64 + 1.0) / (d + 1.0);
        path[i].weight = zero_fraction * path[i].weight * (d - i as f64) / (d + 1.0);
    }
}

fn unwind_path(path: &mut [PathElement], depth: usize, index: usize) {
    let PathElement { one_fraction, zero_fraction, .. } = path[index];
    let d = depth as f64;
    let mut next = path[depth].weight;
    for i in (0..depth).rev() {
        if one_fraction != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * (d + 1.0) / ((i as f64 + 1.0) * one_fraction);
            next = tmp - path[i].weight * zero_fraction * (d - i as f64) / (d + 1.0);
        } else {
            path[i].weight = path[i].weight * (d + 1.0) / (zero_fraction * (d - i as f64));
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

fn unwound_sum(path: &[PathElement], depth: usize, index: usize) -> f64 {
    let PathElement { one_fraction, zero_fraction, .. } = path[index];
    let d = depth as f64;
    let mut next = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one_fraction != 0.0 {
            let tmp = next * (d + 1.0) / ((i as f64 + 1.0) * one_fraction);
            total += tmp;
            next = path[i].weight - tmp * zero_fraction * (d - i as f64) / (d + 1.0);
        } else {
            total += path[i].weight / zero_fraction / ((d - i as f64) / (d + 1.0));
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &Tree,
    node: usize,
    x: &[f64],
    phi: &mut [f64],
    parent: &[PathElement],
    mut depth: usize,
    zero_fraction: f64,
    one_fraction: f64,
    feature: i64,
) {
    let mut path = parent.to_vec();
    path.push(PathElement { feature: 0, zero_fraction: 0.0, one_fraction: 0.0, weight: 0.0 });
    extend_path(&mut path, depth, zero_fraction, one_fraction, feature);
    let n = &tree.nodes[node];
    if n.is_leaf() {
        for i in 1..=depth {
            let w = unwound_sum(&path, depth, i);
            let el = path[i];
            phi[el.feature as usize] += w * (el.one_fraction - el.zero_fraction) * n.value;
        }
        return;
    }
    let split = n.feature as i64;
    let (hot, cold) =
        if x[n.feature as usize] <= n.threshold { (n.left, n.right) } else { (n.right, n.left) };
    let (hot, cold) = (hot as usize, cold as usize);
    let (mut incoming_zero, mut incoming_one) = (1.0, 1.0);
    if let Some(k) = (0..=depth).find(|&k| path[k].feature == split) {
        incoming_zero = path[k].zero_fraction;
        incoming_one = path[k].one_fraction;
        unwind_path(&mut path, depth, k);
        depth -= 1;
        path.pop();
    }
    let hot_zero = tree.nodes[hot].cover / n.cover;
    let cold_zero = tree.nodes[cold].cover / n.cover;
    recurse(tree, hot, x, phi, &path, depth + 1, hot_zero * incoming_zero, incoming_one, split);
    recurse(tree, cold, x, phi, &path, depth + 1, cold_zero * incoming_zero, 0.0, split);
}

/// Adds one tree's attributions for `x` to `phi`.
pub fn tree_shap(tree: &Tree, x: &[f64], phi: &mut [f64]) {
    recurse(tree, 0, x, phi, &[], 0, 1.0, 1.0, -1);
}

/// Cover-weighted mean leaf value of a tree.
pub fn expected_value(tree: &Tree) -> f64 {
    let root = tree.nodes[0].cover;
    tree.nodes.iter().filter(|n| n.is_leaf()).map(|n| n.cover * n.value).sum::<f64>() / root
}

/// Attributions of `rows` of `x` for the forest score.
pub fn treeshap(forest: &Forest, x: &FeatureMatrix, rows: &[usize]) -> Result<ShapMatrix> {
    check_schema(&forest.feature_names, x)?;
    let m = x.n_cols();
    let k = forest.trees.len() as f64;
    let per_row: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|&r| {
            let mut phi = vec![0.0; m];
            for t in &forest.trees {
                tree_shap(t, x.row(r), &mut phi);
            }
            phi.iter_mut().for_each(|v| *v /= k);
            phi
        })
        .collect();
    let base_value = forest.trees.iter().map(expected_value).sum::<f64>() / k;
    let scores = rows.par_iter().map(|&r| forest.predict_row(x.row(r))).collect();
    Ok(ShapMatrix {
        feature_names: forest.feature_names.clone(),
        rows: rows.to_vec(),
        values: per_row.concat(),
        base_value,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub name: String,
    pub display_name: String,
    pub source: String,
    /// Mean absolute attribution.
    pub importance: f64,
    /// 1-based position in the ranking.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub schema_version: u32,
    pub n_rows: usize,
    /// Sorted by decreasing importance; ties keep column order.
    pub features: Vec<FeatureImportance>,
    /// Sum of member importances per source group.
    pub groups: BTreeMap<String, f64>,
}

impl ImportanceReport {
    pub fn top(&self, k: usize) -> &[FeatureImportance] {
        &self.features[..k.min(self.features.len())]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Mean `|phi|` per feature, grouped by the source recorded in `x`'s columns.
pub fn global_importance(shap: &ShapMatrix, x: &FeatureMatrix) -> Result<ImportanceReport> {
    check_schema(&shap.feature_names, x)?;
    let n = shap.rows.len().max(1) as f64;
    let mut features: Vec<FeatureImportance> = x
        .columns
        .iter()
        .enumerate()
        .map(|(f, c)| {
            let importance = (0..shap.rows.len()).map(|i| shap.row(i)[f].abs()).sum::<f64>() / n;
            let display = if c.name == c.origin {
                display_name(&c.origin).to_string()
            } else {
                format!("{} [{}]", display_name(&c.origin), c.name[c.origin.len()..].trim_start_matches('='))
            };
            FeatureImportance {
                name: c.name.clone(),
                display_name: display,
                source: c.source.as_str().to_string(),
                importance,
                rank: 0,
            }
        })
        .collect();
    features.sort_by(|a, b| b.importance.total_cmp(&a.importance));
    let mut groups = BTreeMap::new();
    for (i, f) in features.iter_mut().enumerate() {
        f.rank = i + 1;
        *groups.entry(f.source.clone()).or_insert(0.0) += f.importance;
    }
    Ok(ImportanceReport { schema_version: SCHEMA_VERSION, n_rows: shap.rows.len(), features, groups })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencePoint {
    pub row: usize,
    pub value: f64,
    pub shap: f64,
    pub color: f64,
    /// The feature value is the missing-value sentinel.
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceExport {
    pub schema_version: u32,
    pub feature: String,
    pub color_feature: String,
    pub points: Vec<DependencePoint>,
    /// Pearson correlation of value and attribution over non-missing rows;
    /// `None` when either side is constant.
    pub pearson: Option<f64>,
    /// 10th and 90th percentiles of all attributions of all features.
    pub band: (f64, f64),
    /// Histogram of non-missing feature values.
    pub histogram: Vec<HistogramBin>,
}

impl DependenceExport {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["row", "value", "shap", "color", "missing"])?;
        for p in &self.points {
            w.write_record([
                p.row.to_string(),
                p.value.to_string(),
                p.shap.to_string(),
                p.color.to_string(),
                p.missing.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const HISTOGRAM_BINS: usize = 20;

/// Scatter data of `feature` against its attribution, colored by
/// `color_feature`, for the rows of `shap`.
pub fn dependence_export(
    shap: &ShapMatrix,
    x: &FeatureMatrix,
    feature: &str,
    color_feature: &str,
) -> Result<DependenceExport> {
    check_schema(&shap.feature_names, x)?;
    let col = |name: &str| {
        x.column_index(name)
            .ok_or_else(|| crate::Error::invalid(format!("unknown feature '{name}'")))
    };
    let (f, c) = (col(feature)?, col(color_feature)?);
    let missing = x.missing_mask(f);
    let points: Vec<DependencePoint> = shap
        .rows
        .iter()
        .enumerate()
        .map(|(i, &r)| DependencePoint {
            row: r,
            value: x.get(r, f),
            shap: shap.row(i)[f],
            color: x.get(r, c),
            missing: missing[r],
        })
        .collect();
    let present: Vec<&DependencePoint> = points.iter().filter(|p| !p.missing).collect();
    let xs: Vec<f64> = present.iter().map(|p| p.value).collect();
    let ys: Vec<f64> = present.iter().map(|p| p.shap).collect();
    let mut all = shap.values.clone();
    all.sort_by(f64::total_cmp);
    let band = if all.is_empty() { (0.0, 0.0) } else { (quantile_sorted(&all, 0.1), quantile_sorted(&all, 0.9)) };
    Ok(DependenceExport {
        schema_version: SCHEMA_VERSION,
        feature: feature.to_string(),
        color_feature: color_feature.to_string(),
        pearson: pearson(&xs, &ys),
        band,
        histogram: histogram(&xs, HISTOGRAM_BINS),
        points,
    })
}

/// Equal-width histogram; the last bin is closed on the right.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return vec![HistogramBin { lo, hi, count: values.len() }];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo: lo + i as f64 * width,
            hi: if i + 1 == bins { hi } else { lo + (i + 1) as f64 * width },
            count,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulearn::{Node, LEAF};

    fn leaf(value: f64, cover: f64) -> Node {
        Node { feature: LEAF, threshold: 0.0, left: LEAF, right: LEAF, value, cover }
    }

    fn split(feature: u32, threshold: f64, left: u32, right: u32, cover: f64) -> Node {
        Node { feature, threshold, left, right, value: 0.0, cover }
    }

    #[test]
    fn stump_attribution() {
        // 30% of the background goes left with value a = 0.9, the rest right with b = 0.2.
        let t = Tree { nodes: vec![split(1, 0.5, 1, 2, 10.0), leaf(0.9, 3.0), leaf(0.2, 7.0)] };
        let mut phi = vec![0.0; 3];
        tree_shap(&t, &[7.0, 0.0, 7.0], &mut phi);
        assert!((phi[1] - 0.7 * (0.9 - 0.2)).abs() < 1e-15);
        assert_eq!((phi[0], phi[2]), (0.0, 0.0));
        assert!((expected_value(&t) - (0.3 * 0.9 + 0.7 * 0.2)).abs() < 1e-15);
    }

    #[test]
    fn constant_leaf_has_no_attribution() {
        let t = Tree { nodes: vec![leaf(0.4, 5.0)] };
        let mut phi = vec![0.0; 2];
        tree_shap(&t, &[1.0, 2.0], &mut phi);
        assert_eq!(phi, vec![0.0, 0.0]);
        assert_eq!(expected_value(&t), 0.4);
    }

    #[test]
    fn repeated_feature_on_path() {
        let t = Tree {
            nodes: vec![
                split(0, 0.5, 1, 2, 8.0),
                split(0, 0.2, 3, 4, 4.0),
                leaf(0.6, 4.0),
                leaf(0.1, 1.0),
                leaf(0.3, 3.0),
            ],
        };
        let mut phi = vec![0.0];
        tree_shap(&t, &[0.3], &mut phi);
        assert!((expected_value(&t) + phi[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn symmetric_duplicate_features() {
        // f0 and f1 are interchangeable: the tree is symmetric in them.
        let t = Tree {
            nodes: vec![
                split(0, 0.5, 1, 2, 8.0),
                split(1, 0.5, 3, 4, 4.0),
                split(1, 0.5, 5, 6, 4.0),
                leaf(0.0, 2.0),
                leaf(0.5, 2.0),
                leaf(0.5, 2.0),
                leaf(1.0, 2.0),
            ],
        };
        let mut phi = vec![0.0; 2];
        tree_shap(&t, &[1.0, 1.0], &mut phi);
        assert!((phi[0] - phi[1]).abs() < 1e-15);
    }

    #[test]
    fn histogram_counts_every_value() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let h = histogram(&v, 20);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 100);
        assert_eq!(h.last().unwrap().hi, 99.0);
        assert_eq!(histogram(&[2.0, 2.0], 5).len(), 1);
    }
}
