//! Classification and regression metrics with record-level bootstrap
//! confidence intervals.

mod bootstrap;
mod report;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};

pub use bootstrap::{bootstrap_ci, percentile, Interval, DEFAULT_N_BOOT};
pub use report::{evaluate_multilabel, pr_curve, roc_curve, curve_csv, LabelReport, MetricReport};

/// Scores for one label over a set of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub record_ids: Vec<String>,
}

impl ScoredSet {
    /// Record ids default to the positional index.
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        let ids = (0..scores.len()).map(|i| i.to_string()).collect();
        Self::with_ids(scores, labels, ids)
    }

    pub fn with_ids(scores: Vec<f64>, labels: Vec<bool>, record_ids: Vec<String>) -> Result<Self> {
        if scores.len() != labels.len() || scores.len() != record_ids.len() {
            return Err(shape(format!(
                "{} scores, {} labels, {} ids",
                scores.len(),
                labels.len(),
                record_ids.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(invalid(format!("non-finite score {s}")));
        }
        Ok(Self { scores, labels, record_ids })
    }

    /// From 0/1 integer labels.
    pub fn from_binary(scores: &[f64], labels: &[u8]) -> Result<Self> {
        if let Some(b) = labels.iter().find(|&&y| y > 1) {
            return Err(invalid(format!("label {b} outside {{0, 1}}")));
        }
        Self::new(scores.to_vec(), labels.iter().map(|&y| y == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }

    /// Resample by index (repeats allowed).
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            record_ids: idx.iter().map(|&i| self.record_ids[i].clone()).collect(),
        }
    }

    /// Indices sorted by descending score.
    fn order_desc(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx
    }
}

/// Groups of equal score in descending order as (positives, negatives).
fn tie_groups(set: &ScoredSet) -> Vec<(f64, u64, u64)> {
    let mut out: Vec<(f64, u64, u64)> = Vec::new();
    for i in set.order_desc() {
        let (s, y) = (set.scores[i], set.labels[i]);
        match out.last_mut() {
            Some(g) if g.0 == s => {
                if y {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => out.push((s, u64::from(y), u64::from(!y))),
        }
    }
    out
}

/// Mann-Whitney estimate from exact integer pair counts.
pub fn auroc(set: &ScoredSet) -> Result<f64> {
    let (p, n) = (set.n_pos() as u64, set.n_neg() as u64);
    if p == 0 || n == 0 {
        return Err(Error::Undefined("undefined AUROC: needs both classes".into()));
    }
    // walking from the top score down, every negative seen so far outranks
    // the current positives; count the complement
    let (mut neg_above, mut wrong, mut tied) = (0u64, 0u64, 0u64);
    for (_, gp, gn) in tie_groups(set) {
        wrong += gp * neg_above;
        tied += gp * gn;
        neg_above += gn;
    }
    let correct = p * n - wrong - tied;
    Ok((2 * correct + tied) as f64 / (2 * p * n) as f64)
}

/// Step-wise area under the precision-recall curve: the sum over tie
/// groups (descending score) of recall increment times precision.
pub fn auprc(set: &ScoredSet) -> Result<f64> {
    let p = set.n_pos() as f64;
    if p == 0.0 {
        return Err(Error::Undefined("undefined AUPRC: no positives".into()));
    }
    let (mut tp, mut fp, mut area) = (0u64, 0u64, 0.0);
    for (_, gp, gn) in tie_groups(set) {
        tp += gp;
        fp += gn;
        if gp > 0 {
            area += (gp as f64 / p) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Confusion {
    /// Predicted positive when score >= threshold.
    pub fn at(set: &ScoredSet, threshold: f64) -> Self {
        let mut c = Self::default();
        for (&s, &y) in set.scores.iter().zip(&set.labels) {
            match (s >= threshold, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn metrics(&self) -> ConfusionMetrics {
        let n = self.tp + self.fp + self.tn + self.fn_;
        ConfusionMetrics {
            sensitivity: ratio(self.tp, self.tp + self.fn_),
            specificity: ratio(self.tn, self.tn + self.fp),
            accuracy: ratio(self.tp + self.tn, n),
            f1: ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_),
            ppv: ratio(self.tp, self.tp + self.fp),
            npv: ratio(self.tn, self.tn + self.fn_),
        }
    }
}

/// Zero-denominator ratios are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

pub fn confusion_metrics(set: &ScoredSet, threshold: f64) -> ConfusionMetrics {
    Confusion::at(set, threshold).metrics()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdPolicy {
    Fixed(f64),
    Youden,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self::Fixed(0.5)
    }
}

/// Operating threshold. Youden's J is maximized over midpoints between
/// consecutive distinct scores; ties go to the higher threshold.
pub fn select_threshold(set: &ScoredSet, policy: ThresholdPolicy) -> Result<f64> {
    match policy {
        ThresholdPolicy::Fixed(t) => Ok(t),
        ThresholdPolicy::Youden => {
            let (p, n) = (set.n_pos() as f64, set.n_neg() as f64);
            if p == 0.0 || n == 0.0 {
                return Err(Error::Undefined("Youden threshold needs both classes".into()));
            }
            let groups = tie_groups(set);
            if groups.len() == 1 {
                return Ok(groups[0].0);
            }
            // sweep from high to low thresholds; only a strictly larger J
            // replaces the incumbent
            let (mut tp, mut fp) = (0u64, 0u64);
            let mut best: Option<(f64, f64)> = None;
            for w in groups.windows(2) {
                tp += w[0].1;
                fp += w[0].2;
                let t = 0.5 * (w[0].0 + w[1].0);
                let j = tp as f64 / p + (n - fp as f64) / n - 1.0;
                if best.map_or(true, |(bj, _)| j > bj) {
                    best = Some((j, t));
                }
            }
            Ok(best.expect("at least two groups").1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    Auroc,
    Auprc,
    Sensitivity,
    Specificity,
    Accuracy,
    F1,
    Ppv,
    Npv,
}

impl MetricName {
    pub const ALL: [MetricName; 8] = [
        Self::Auroc,
        Self::Auprc,
        Self::Sensitivity,
        Self::Specificity,
        Self::Accuracy,
        Self::F1,
        Self::Ppv,
        Self::Npv,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Auroc => "auroc",
            Self::Auprc => "auprc",
            Self::Sensitivity => "sensitivity",
            Self::Specificity => "specificity",
            Self::Accuracy => "accuracy",
            Self::F1 => "f1",
            Self::Ppv => "ppv",
            Self::Npv => "npv",
        }
    }

    /// `None` when undefined on this set.
    pub fn evaluate(&self, set: &ScoredSet, threshold: f64) -> Option<f64> {
        match self {
            Self::Auroc => auroc(set).ok(),
            Self::Auprc => auprc(set).ok(),
            _ => {
                let m = confusion_metrics(set, threshold);
                match self {
                    Self::Sensitivity => m.sensitivity,
                    Self::Specificity => m.specificity,
                    Self::Accuracy => m.accuracy,
                    Self::F1 => m.f1,
                    Self::Ppv => m.ppv,
                    _ => m.npv,
                }
            }
        }
    }
}

impl std::str::FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| invalid(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub pearson_r: Option<f64>,
}

pub fn regression_metrics(preds: &[f64], targets: &[f64]) -> Result<RegressionMetrics> {
    if preds.len() != targets.len() {
        return Err(shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    if preds.len() < 2 {
        return Err(invalid("regression metrics need at least two points"));
    }
    let n = preds.len() as f64;
    let mae = preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let rmse = (preds.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n).sqrt();
    let (mp, mt) = (preds.iter().sum::<f64>() / n, targets.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in preds.iter().zip(targets) {
        sxy += (p - mp) * (t - mt);
        sxx += (p - mp).powi(2);
        syy += (t - mt).powi(2);
    }
    let pearson_r = (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0));
    Ok(RegressionMetrics { mae, rmse, pearson_r })
}

/// Unweighted mean over the defined entries.
pub fn macro_mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
