//! PU bagging over random-Fourier-feature linear classifiers.
//!
//! Features are z-scored with training statistics and mapped once through a
//! shared random Fourier feature map approximating an RBF kernel. Each
//! estimator contrasts all labeled positives with an equally sized bootstrap
//! of unlabeled rows treated as negatives, fitted by hinge-loss stochastic
//! subgradient descent.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TrainingSet;
use crate::error::{Error, Result};
use crate::featureset::{check_schema, FeatureMatrix};
use crate::util::{derive_seed, rng, Rng};

/// Per-column z-scoring with statistics from the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; constant columns use 1.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &FeatureMatrix, rows: &[usize]) -> Self {
        let w = x.n_cols();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; w];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; w];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var.into_iter().map(|s| (s / n).sqrt()).map(|s| if s > 0.0 { s } else { 1.0 }).collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, row: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.scale) {
            *o = (v - m) / s;
        }
    }
}

/// `z(x)_j = sqrt(2/D) cos(w_j . x + b_j)` with `w_j ~ N(0, 2 gamma I)` and
/// `b_j ~ U[0, 2 pi)`, so that `z(x) . z(y)` approximates
/// `exp(-gamma |x - y|^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffMap {
    pub gamma: f64,
    pub input_dim: usize,
    pub components: usize,
    /// `components x input_dim`, row-major.
    pub omega: Vec<f64>,
    pub phase: Vec<f64>,
}

impl RffMap {
    pub fn new(input_dim: usize, gamma: f64, components: usize, seed: u64) -> Result<Self> {
        if components == 0 {
            return Err(Error::invalid("random Fourier features need at least one component"));
        }
        if gamma.is_nan() || gamma <= 0.0 {
            return Err(Error::invalid(format!("RBF gamma must be positive, got {gamma}")));
        }
        let mut r = rng(seed);
        let normal = Normal::new(0.0, (2.0 * gamma).sqrt()).expect("positive variance");
        let omega = (0..components * input_dim).map(|_| normal.sample(&mut r)).collect();
        let uniform = Uniform::new(0.0, 2.0 * std::f64::consts::PI).expect("nonempty range");
        let phase = (0..components).map(|_| uniform.sample(&mut r)).collect();
        Ok(RffMap { gamma, input_dim, components, omega, phase })
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let scale = (2.0 / self.components as f64).sqrt();
        self.omega
            .chunks_exact(self.input_dim)
            .zip(&self.phase)
            .map(|(w, b)| scale * (w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b).cos())
            .collect()
    }
}

pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    (-gamma * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    /// L2 regularization strength.
    pub lambda: f64,
    pub max_epochs: usize,
    /// Minimum improvement of the mean epoch loss that counts as progress.
    pub tol: f64,
    /// Epochs without progress before stopping.
    pub patience: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { lambda: 1e-4, max_epochs: 1000, tol: 1e-6, patience: 5 }
    }
}

/// Linear hinge-loss classifier fitted by stochastic subgradient descent with
/// step `1 / (lambda (t0 + t))`, where `t0` makes the first step
/// `lambda^(-1/4)`. Rows are visited in a fresh random order every epoch;
/// training stops once the mean epoch loss fails to improve by `tol` for
/// `patience` epochs. Returns (weights, bias, epochs).
pub fn hinge_sgd(xs: &[Vec<f64>], ys: &[f64], cfg: &SgdConfig, rng: &mut Rng) -> (Vec<f64>, f64, usize) {
    let dim = xs.first().map_or(0, Vec::len);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let typw = (1.0 / cfg.lambda.sqrt()).sqrt();
    let t0 = 1.0 / (cfg.lambda * typw);
    let mut t = 0.0;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut epochs = 0;
    while epochs < cfg.max_epochs {
        epochs += 1;
        order.shuffle(rng);
        let mut loss = 0.0;
        for &i in &order {
            let (x, y) = (&xs[i], ys[i]);
            let margin = y * (w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b);
            let eta = 1.0 / (cfg.lambda * (t0 + t));
            let decay = (1.0 - eta * cfg.lambda).max(0.0);
            w.iter_mut().for_each(|v| *v *= decay);
            if margin < 1.0 {
                loss += 1.0 - margin;
                for (v, c) in w.iter_mut().zip(x) {
                    *v += eta * y * c;
                }
                b += eta * y;
            }
            t += 1.0;
        }
        let mean_loss = loss / xs.len() as f64;
        if mean_loss > best - cfg.tol {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        } else {
            stale = 0;
        }
        best = best.min(mean_loss);
    }
    (w, b, epochs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Fraction of estimators with a positive decision value.
    VoteFraction,
    /// Mean decision value.
    MeanMargin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Aggregate over every estimator.
    Test,
    /// Aggregate over estimators that did not sample the row.
    Transductive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PuBaggingConfig {
    pub n_estimators: usize,
    /// Unlabeled rows per estimator; `None` uses the positive count.
    pub sample_size: Option<usize>,
    pub rff_gamma: f64,
    pub rff_components: usize,
    pub sgd: SgdConfig,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl Default for PuBaggingConfig {
    fn default() -> Self {
        PuBaggingConfig {
            n_estimators: 500,
            sample_size: None,
            rff_gamma: 0.01,
            rff_components: 200,
            sgd: SgdConfig::default(),
            aggregation: Aggregation::VoteFraction,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Distinct unlabeled matrix rows drawn for this estimator, ascending.
    pub sampled: Vec<usize>,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuBagging {
    pub config: PuBaggingConfig,
    pub feature_names: Vec<String>,
    pub standardizer: Standardizer,
    pub rff: RffMap,
    pub estimators: Vec<Estimator>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuBaggingReport {
    pub n_positive: usize,
    pub n_unlabeled: usize,
    pub sample_size: usize,
    pub mean_epochs: f64,
    pub max_epochs_reached: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransductiveScores {
    pub scores: Vec<f64>,
    /// Rows drawn by every estimator, scored with all estimators instead.
    pub fallback_rows: Vec<usize>,
}

impl PuBagging {
    pub fn train(x: &FeatureMatrix, set: &TrainingSet, config: &PuBaggingConfig) -> Result<(PuBagging, PuBaggingReport)> {
        let (positives, unlabeled) = set.split()?;
        if config.n_estimators == 0 {
            return Err(Error::invalid("PU bagging needs at least one estimator"));
        }
        let size = config.sample_size.unwrap_or(positives.len()).max(1);
        let standardizer = Standardizer::fit(x, &set.rows);
        let rff = RffMap::new(x.n_cols(), config.rff_gamma, config.rff_components, derive_seed(config.seed, u64::MAX))?;
        let embed = |rows: &[usize]| -> Vec<Vec<f64>> {
            rows.par_iter()
                .map(|&r| {
                    let mut z = vec![0.0; x.n_cols()];
                    standardizer.apply(x.row(r), &mut z);
                    rff.transform(&z)
                })
                .collect()
        };
        let pos_z = embed(&positives);
        let unl_z = embed(&unlabeled);
        let estimators: Vec<Estimator> = (0..config.n_estimators)
            .into_par_iter()
            .map(|e| {
                let mut r = rng(derive_seed(config.seed, e as u64));
                let draws: Vec<usize> = (0..size).map(|_| r.random_range(0..unlabeled.len())).collect();
                let mut xs: Vec<Vec<f64>> = pos_z.clone();
                let mut ys = vec![1.0; xs.len()];
                for &d in &draws {
                    xs.push(unl_z[d].clone());
                    ys.push(-1.0);
                }
                let (weights, bias, epochs) = hinge_sgd(&xs, &ys, &config.sgd, &mut r);
                let mut sampled: Vec<usize> = draws.iter().map(|&d| unlabeled[d]).collect();
                sampled.sort_unstable();
                sampled.dedup();
                Estimator { weights, bias, sampled, epochs }
            })
            .collect();
        let report = PuBaggingReport {
            n_positive: positives.len(),
            n_unlabeled: unlabeled.len(),
            sample_size: size,
            mean_epochs: estimators.iter().map(|e| e.epochs as f64).sum::<f64>() / estimators.len() as f64,
            max_epochs_reached: estimators.iter().filter(|e| e.epochs >= config.sgd.max_epochs).count(),
        };
        Ok((
            PuBagging { config: *config, feature_names: x.column_names(), standardizer, rff, estimators },
            report,
        ))
    }

    fn embed_row(&self, row: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; row.len()];
        self.standardizer.apply(row, &mut z);
        self.rff.transform(&z)
    }

    fn decision(e: &Estimator, z: &[f64]) -> f64 {
        e.weights.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + e.bias
    }

    fn aggregate<'a>(&self, z: &[f64], members: impl Iterator<Item = &'a Estimator>) -> f64 {
        let (mut acc, mut n) = (0.0, 0usize);
        for e in members {
            let d = Self::decision(e, z);
            acc += match self.config.aggregation {
                Aggregation::VoteFraction => (d > 0.0) as u8 as f64,
                Aggregation::MeanMargin => d,
            };
            n += 1;
        }
        acc / n as f64
    }

    /// Scores every row of `x` with all estimators.
    pub fn score(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        check_schema(&self.feature_names, x)?;
        Ok((0..x.n_rows())
            .into_par_iter()
            .with_min_len(64)
            .map(|r| self.aggregate(&self.embed_row(x.row(r)), self.estimators.iter()))
            .collect())
    }

    /// Out-of-bag scores for `rows` of the training matrix: each row is
    /// scored only by estimators that did not draw it.
    pub fn score_transductive(&self, x: &FeatureMatrix, rows: &[usize]) -> Result<TransductiveScores> {
        check_schema(&self.feature_names, x)?;
        let scored: Vec<(f64, bool)> = rows
            .par_iter()
            .with_min_len(64)
            .map(|&r| {
                let z = self.embed_row(x.row(r));
                let oob = || self.estimators.iter().filter(|e| e.sampled.binary_search(&r).is_err());
                if oob().next().is_some() {
                    (self.aggregate(&z, oob()), false)
                } else {
                    (self.aggregate(&z, self.estimators.iter()), true)
                }
            })
            .collect();
        let fallback_rows: Vec<usize> = rows.iter().zip(&scored).filter(|(_, s)| s.1).map(|(&r, _)| r).collect();
        if !fallback_rows.is_empty() {
            log::warn!("{} rows were drawn by every estimator and were scored by all of them", fallback_rows.len());
        }
        Ok(TransductiveScores { scores: scored.into_iter().map(|s| s.0).collect(), fallback_rows })
    }

    pub fn score_mode(&self, x: &FeatureMatrix, rows: &[usize], mode: ScoreMode) -> Result<Vec<f64>> {
        match mode {
            ScoreMode::Test => Ok(self.score(&x.select_rows(rows))?),
            ScoreMode::Transductive => Ok(self.score_transductive(x, rows)?.scores),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featureset::{ColumnKind, ColumnMeta, FeatureSource};

    fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
        let w = rows[0].len();
        let columns = (0..w)
            .map(|j| ColumnMeta {
                name: format!("f{j}"),
                kind: ColumnKind::Continuous,
                sentinel: None,
                source: FeatureSource::Domain,
                origin: format!("f{j}"),
            })
            .collect();
        FeatureMatrix::new(columns, rows.len(), rows.concat()).unwrap()
    }

    fn planted() -> (FeatureMatrix, Vec<bool>) {
        let mut r = rng(11);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..300 {
            let p = i % 6 == 0;
            let shift = if p { 3.0 } else { 0.0 };
            rows.push(vec![shift + r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]);
            y.push(p);
        }
        (matrix(&rows), y)
    }

    #[test]
    fn feature_norm_is_bounded() {
        let m = RffMap::new(3, 0.5, 50, 1).unwrap();
        for x in [[0.0, 0.0, 0.0], [5.0, -3.0, 2.0]] {
            let z = m.transform(&x);
            assert!(z.iter().map(|v| v * v).sum::<f64>() <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn kernel_approximation() {
        let m = RffMap::new(10, 0.01, 200, 3).unwrap();
        let mut r = rng(4);
        let mut err = 0.0;
        for _ in 0..1000 {
            let x: Vec<f64> = (0..10).map(|_| r.random_range(0.0..1.0)).collect();
            let y: Vec<f64> = (0..10).map(|_| r.random_range(0.0..1.0)).collect();
            let approx: f64 = m.transform(&x).iter().zip(m.transform(&y)).map(|(a, b)| a * b).sum();
            err += (approx - rbf_kernel(&x, &y, 0.01)).abs();
        }
        assert!(err / 1000.0 <= 0.1, "{}", err / 1000.0);
    }

    #[test]
    fn planted_positives_score_higher() {
        let (x, y) = planted();
        let set = TrainingSet::new((0..300).collect(), y.clone());
        let cfg = PuBaggingConfig { n_estimators: 20, rff_gamma: 0.5, ..Default::default() };
        let (model, report) = PuBagging::train(&x, &set, &cfg).unwrap();
        assert_eq!(report.sample_size, 50);
        let s = model.score(&x).unwrap();
        let mean = |want: bool| {
            let v: Vec<f64> = s.iter().zip(&y).filter(|(_, p)| **p == want).map(|(v, _)| *v).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(true) > mean(false));
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn single_estimator_votes_are_binary() {
        let (x, y) = planted();
        let set = TrainingSet::new((0..300).collect(), y);
        let cfg = PuBaggingConfig { n_estimators: 1, ..Default::default() };
        let (model, _) = PuBagging::train(&x, &set, &cfg).unwrap();
        assert!(model.score(&x).unwrap().iter().all(|&v| v == 0.0 || v == 1.0));
        let (again, _) = PuBagging::train(&x, &set, &cfg).unwrap();
        assert_eq!(again.estimators[0].sampled, model.estimators[0].sampled);
    }

    #[test]
    fn transductive_excludes_in_bag_estimators() {
        let (x, y) = planted();
        let set = TrainingSet::new((0..300).collect(), y.clone());
        let cfg = PuBaggingConfig { n_estimators: 15, ..Default::default() };
        let (model, _) = PuBagging::train(&x, &set, &cfg).unwrap();
        let unl: Vec<usize> = (0..300).filter(|&i| !y[i]).collect();
        let t = model.score_transductive(&x, &unl).unwrap();
        assert_eq!(t.scores.len(), unl.len());
        // Positives are drawn by no estimator as unlabeled, so all estimators are out of bag.
        let pos: Vec<usize> = (0..300).filter(|&i| y[i]).collect();
        let tp = model.score_transductive(&x, &pos).unwrap();
        assert_eq!(tp.scores, model.score(&x.select_rows(&pos)).unwrap());
    }
}
