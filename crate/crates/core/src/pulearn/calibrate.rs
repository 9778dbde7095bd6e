//! Isotonic calibration that keeps the ranking intact.
//!
//! Pool-adjacent-violators yields blocks of calibration rows with increasing
//! positive frequencies. Instead of the usual step function, which would tie
//! every score falling inside one block, the mapping interpolates linearly
//! between block centers (mean raw score, frequency) and decays smoothly
//! toward 0 and 1 outside them. Frequencies are shrunk affinely into
//! `[eps, 1 - eps]` with `eps = 1 / (2 (n + 1))` so the tails stay inside
//! `(0, 1)`. The map is strictly increasing: distinct scores stay distinct
//! and ties stay ties.

use serde::{Deserialize, Serialize};

/// PAV blocks over (score, label) pairs as (mean score, positive frequency,
/// row count). Equal scores always share a block; block frequencies are
/// strictly increasing.
pub fn isotonic_fit(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // (sum score, sum label, count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut j = i;
        let (mut sy, mut n) = (0.0, 0usize);
        while j < order.len() && scores[order[j]] == s {
            sy += labels[order[j]] as u8 as f64;
            n += 1;
            j += 1;
        }
        blocks.push((s * n as f64, sy, n));
        while blocks.len() >= 2 {
            let (a, b) = (blocks[blocks.len() - 2], blocks[blocks.len() - 1]);
            if a.1 / a.2 as f64 >= b.1 / b.2 as f64 {
                blocks.pop();
                *blocks.last_mut().unwrap() = (a.0 + b.0, a.1 + b.1, a.2 + b.2);
            } else {
                break;
            }
        }
        i = j;
    }
    blocks.into_iter().map(|(ss, sy, n)| (ss / n as f64, sy / n as f64, n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedScorer {
    pub centers: Vec<f64>,
    pub values: Vec<f64>,
    /// Decay length of the tails outside the outermost centers.
    pub tail_scale: f64,
    /// Set when calibration had no positives; scores pass through unchanged.
    pub identity: bool,
    pub warning: Option<String>,
}

impl CalibratedScorer {
    /// Fits on calibration-set raw scores and labels.
    pub fn fit(scores: &[f64], labels: &[bool]) -> Self {
        if !labels.iter().any(|&y| y) {
            let warning = "calibration set has no positives; using the identity mapping".to_string();
            log::warn!("{warning}");
            return CalibratedScorer {
                centers: Vec::new(),
                values: Vec::new(),
                tail_scale: 1.0,
                identity: true,
                warning: Some(warning),
            };
        }
        let blocks = isotonic_fit(scores, labels);
        let eps = 1.0 / (2.0 * (scores.len() as f64 + 1.0));
        let centers: Vec<f64> = blocks.iter().map(|b| b.0).collect();
        let values: Vec<f64> = blocks.iter().map(|b| eps + (1.0 - 2.0 * eps) * b.1).collect();
        let span = centers.last().unwrap() - centers[0];
        let tail_scale = if span > 0.0 { span / centers.len() as f64 } else { 1.0 };
        CalibratedScorer { centers, values, tail_scale, identity: false, warning: None }
    }

    pub fn apply(&self, s: f64) -> f64 {
        if self.identity {
            return s;
        }
        let (c, v) = (&self.centers, &self.values);
        let last = c.len() - 1;
        if s <= c[0] {
            return v[0] * ((s - c[0]) / self.tail_scale).exp();
        }
        if s >= c[last] {
            return 1.0 - (1.0 - v[last]) * (-(s - c[last]) / self.tail_scale).exp();
        }
        let k = c.partition_point(|&x| x <= s);
        let (x0, x1, y0, y1) = (c[k - 1], c[k], v[k - 1], v[k]);
        y0 + (y1 - y0) * (s - x0) / (x1 - x0)
    }

    pub fn apply_all(&self, scores: &[f64]) -> Vec<f64> {
        scores.iter().map(|&s| self.apply(s)).collect()
    }
}
