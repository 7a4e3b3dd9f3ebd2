//! Displacement errors, sample-based likelihood, ROC-AUC and the results
//! table.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenes::{Scene, LANE_BOUNDARY_Y};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Smallest KDE bandwidth, in meters.
pub const BANDWIDTH_FLOOR: f64 = 1e-3;

fn check_horizon(pred: usize, gt: usize, h: usize) -> Result<()> {
    if h == 0 || h > pred || h > gt {
        return Err(Error::validation(format!(
            "horizon {h} steps out of range for trajectories of length {pred} and {gt}"
        )));
    }
    Ok(())
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Distance between the predicted and true positions at step `h`.
pub fn fde(pred: &[[f64; 2]], gt: &[[f64; 2]], h: usize) -> Result<f64> {
    check_horizon(pred.len(), gt.len(), h)?;
    Ok(dist(pred[h - 1], gt[h - 1]))
}

/// Mean per-step distance over steps `1..=h`.
pub fn ade(pred: &[[f64; 2]], gt: &[[f64; 2]], h: usize) -> Result<f64> {
    check_horizon(pred.len(), gt.len(), h)?;
    Ok(pred[..h].iter().zip(&gt[..h]).map(|(a, b)| dist(*a, *b)).sum::<f64>() / h as f64)
}

/// How the isotropic kernel width is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// `n^(-1/6) * sqrt((var_x + var_y) / 2)`, population variances, floored
    /// at [`BANDWIDTH_FLOOR`].
    Scott,
    Fixed(f64),
}

impl Bandwidth {
    pub fn select(&self, points: &[[f64; 2]]) -> f64 {
        match *self {
            Bandwidth::Fixed(b) => b,
            Bandwidth::Scott => {
                let n = points.len() as f64;
                let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
                let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
                let vx = points.iter().map(|p| (p[0] - mx).powi(2)).sum::<f64>() / n;
                let vy = points.iter().map(|p| (p[1] - my).powi(2)).sum::<f64>() / n;
                (n.powf(-1.0 / 6.0) * ((vx + vy) / 2.0).sqrt()).max(BANDWIDTH_FLOOR)
            }
        }
    }
}

/// `-ln` of an equal-weight isotropic Gaussian mixture at `x`.
pub fn kde_neg_log_density(points: &[[f64; 2]], x: [f64; 2], bandwidth: f64) -> f64 {
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let exps: Vec<f64> = points
        .iter()
        .map(|p| -((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)) * inv)
        .collect();
    let m = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + exps.iter().map(|e| (e - m).exp()).sum::<f64>().ln();
    LN_2PI + 2.0 * bandwidth.ln() + (points.len() as f64).ln() - lse
}

/// Mean over steps `1..=h` of the KDE negative log-likelihood of `gt`.
/// `samples[i][s]` is sample `i` at step `s`.
pub fn kde_nll(samples: &[Vec<[f64; 2]>], gt: &[[f64; 2]], h: usize, bandwidth: Bandwidth) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::validation("kde_nll needs at least one sample"));
    }
    let shortest = samples.iter().map(Vec::len).min().unwrap_or(0);
    check_horizon(shortest, gt.len(), h)?;
    if let Bandwidth::Fixed(b) = bandwidth {
        if !(b > 0.0) {
            return Err(Error::config("bandwidth", "must be > 0"));
        }
    }
    let mut total = 0.0;
    for s in 0..h {
        let pts: Vec<[f64; 2]> = samples.iter().map(|tr| tr[s]).collect();
        total += kde_neg_log_density(&pts, gt[s], bandwidth.select(&pts));
    }
    Ok(total / h as f64)
}

fn check_labels(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::validation("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::validation("NaN score"));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::validation("AUC needs both positive and negative labels"));
    }
    Ok((pos, neg))
}

fn sorted_ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|a, b| scores[*a].partial_cmp(&scores[*b]).unwrap_or(Ordering::Equal));
    idx
}

/// `P(s+ > s-) + 0.5 P(s+ = s-)` via mid-ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    let idx = sorted_ascending(scores);
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Area under the ROC polyline, thresholds swept from high to low with tied
/// scores entering together.
pub fn auc_trapezoid(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    let mut idx = sorted_ascending(scores);
    idx.reverse();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let (tp0, fp0) = (tp, fp);
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        i = j;
    }
    Ok(area / (pos * neg) as f64)
}

/// Fraction of sampled ego trajectories (meters) that reach the far side of
/// the lane boundary within the sampled horizon.
pub fn gap_acceptance_score(samples: &[Vec<[f64; 2]>], scene: &Scene) -> Result<f64> {
    let meta = scene
        .gap_meta
        .ok_or_else(|| Error::validation(format!("scene {} has no gap metadata", scene.scene_id)))?;
    if samples.is_empty() {
        return Err(Error::validation("gap_acceptance_score needs at least one sample"));
    }
    let ego = scene
        .ego()
        .ok_or_else(|| Error::validation(format!("scene {} has no agents", scene.scene_id)))?;
    let start_y = ego
        .state_at(meta.decision_frame)
        .map(|s| s.y)
        .ok_or_else(|| Error::validation(format!("scene {}: ego absent at decision frame", scene.scene_id)))?;
    let side = (start_y - LANE_BOUNDARY_Y).signum();
    let crossed = samples
        .iter()
        .filter(|tr| tr.iter().any(|p| (p[1] - LANE_BOUNDARY_Y) * side < 0.0))
        .count();
    Ok(crossed as f64 / samples.len() as f64)
}

/// Converts a horizon in seconds to whole steps of `dt`.
pub fn horizon_steps(seconds: f64, dt: f64) -> Result<usize> {
    let steps = seconds / dt;
    let rounded = steps.round();
    if !(dt > 0.0) || rounded < 1.0 || (steps - rounded).abs() > 1e-9 {
        return Err(Error::config(
            "horizons",
            format!("horizon {seconds} s is not a positive multiple of dt = {dt} s"),
        ));
    }
    Ok(rounded as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Fde,
    Ade,
    KdeNll,
    Auc,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Fde, Metric::Ade, Metric::KdeNll, Metric::Auc];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Fde => "fde",
            Metric::Ade => "ade",
            Metric::KdeNll => "kde_nll",
            Metric::Auc => "auc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn higher_is_better(self) -> bool {
        self == Metric::Auc
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const RESULTS_HEADER: [&str; 7] = ["model", "beta", "split", "metric", "horizon_s", "value", "seed"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub beta: f64,
    pub split: String,
    pub metric: Metric,
    pub horizon_s: f64,
    pub value: f64,
    pub seed: u64,
}

impl ResultRow {
    fn key(&self) -> (String, u64, String, Metric, u64, u64) {
        (
            self.model.clone(),
            self.beta.to_bits(),
            self.split.clone(),
            self.metric,
            self.horizon_s.to_bits(),
            self.seed,
        )
    }
}

/// Result rows with unique `(model, beta, split, metric, horizon, seed)` keys.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    rows: Vec<ResultRow>,
    keys: BTreeSet<(String, u64, String, Metric, u64, u64)>,
}

impl MetricsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: ResultRow) -> Result<()> {
        if !self.keys.insert(row.key()) {
            return Err(Error::validation(format!(
                "duplicate result row {} beta={} split={} {} @{}s seed={}",
                row.model, row.beta, row.split, row.metric, row.horizon_s, row.seed
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn extend(&mut self, other: MetricsTable) -> Result<()> {
        other.rows.into_iter().try_for_each(|r| self.push(r))
    }

    pub fn find(&self, model: &str, metric: Metric, horizon_s: f64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.metric == metric && r.horizon_s == horizon_s)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        w.write_record(RESULTS_HEADER).map_err(|e| Error::io(path, e.into()))?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.beta.to_string(),
                r.split.clone(),
                r.metric.to_string(),
                r.horizon_s.to_string(),
                r.value.to_string(),
                r.seed.to_string(),
            ])
            .map_err(|e| Error::io(path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        let header = rd.headers().map_err(|e| Error::io(path, e.into()))?.clone();
        if header.iter().ne(RESULTS_HEADER) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                reason: format!("expected header {}", RESULTS_HEADER.join(",")),
            });
        }
        let mut table = Self::new();
        for (i, rec) in rd.deserialize::<ResultRow>().enumerate() {
            let row = rec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 2,
                reason: e.to_string(),
            })?;
            table.push(row)?;
        }
        Ok(table)
    }
}
