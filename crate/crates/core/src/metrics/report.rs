use std::collections::BTreeMap;
use std::fmt::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bootstrap::{draw_indices, percentile, resample_rng};
use super::{bootstrap_ci, macro_mean, select_threshold, tie_groups, MetricName, ScoredSet, ThresholdPolicy};
use crate::error::{shape, Result};

/// Point estimate with optional bootstrap bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub point: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub name: String,
    pub n: usize,
    pub n_pos: usize,
    pub threshold: Option<f64>,
    pub metrics: BTreeMap<String, MetricValue>,
}

impl LabelReport {
    pub fn point(&self, m: MetricName) -> Option<f64> {
        self.metrics.get(m.as_str()).and_then(|v| v.point)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub labels: Vec<LabelReport>,
    #[serde(rename = "macro")]
    pub macro_avg: BTreeMap<String, MetricValue>,
    pub threshold_policy: ThresholdPolicy,
    pub n_bootstrap: usize,
    pub seed: u64,
}

impl MetricReport {
    pub fn macro_point(&self, m: MetricName) -> Option<f64> {
        self.macro_avg.get(m.as_str()).and_then(|v| v.point)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Per-label and macro metrics. `sets` holds one scored set per label over
/// the same records in the same order. With `n_boot == 0` no intervals
/// are computed.
pub fn evaluate_multilabel(
    sets: &[ScoredSet],
    names: &[String],
    policy: ThresholdPolicy,
    n_boot: usize,
    seed: u64,
) -> Result<MetricReport> {
    if sets.len() != names.len() {
        return Err(shape(format!("{} label sets for {} names", sets.len(), names.len())));
    }
    let n = sets.first().map_or(0, ScoredSet::len);
    if sets.iter().any(|s| s.len() != n) {
        return Err(shape("label sets cover different records"));
    }
    let thresholds: Vec<Option<f64>> = sets.iter().map(|s| select_threshold(s, policy).ok()).collect();
    let mut labels = Vec::with_capacity(sets.len());
    for ((set, name), &thr) in sets.iter().zip(names).zip(&thresholds) {
        let mut metrics = BTreeMap::new();
        for m in MetricName::ALL {
            let point = thr.and_then(|t| m.evaluate(set, t));
            let ci = match (point, thr) {
                (Some(_), Some(t)) if n_boot > 0 => bootstrap_ci(set, m, t, n_boot, seed).ok(),
                _ => None,
            };
            metrics.insert(
                m.as_str().to_string(),
                MetricValue { point, ci_low: ci.map(|c| c.ci_low), ci_high: ci.map(|c| c.ci_high) },
            );
        }
        labels.push(LabelReport { name: name.clone(), n, n_pos: set.n_pos(), threshold: thr, metrics });
    }

    let macro_of = |idx: Option<&[usize]>, m: MetricName| -> Option<f64> {
        macro_mean(sets.iter().zip(&thresholds).map(|(s, t)| {
            let t = (*t)?;
            match idx {
                Some(ix) => m.evaluate(&s.select(ix), t),
                None => m.evaluate(s, t),
            }
        }))
    };
    let mut macro_avg = BTreeMap::new();
    for m in MetricName::ALL {
        let point = macro_of(None, m);
        let (mut lo, mut hi) = (None, None);
        if point.is_some() && n_boot > 0 && n > 0 {
            let draws: Option<Vec<f64>> = (0..n_boot)
                .into_par_iter()
                .map(|b| {
                    let mut rng = resample_rng(seed, b);
                    let mut v = None;
                    draw_indices(n, &mut rng, |ix| {
                        v = macro_of(Some(ix), m);
                        v.is_some()
                    })?;
                    v
                })
                .collect();
            if let Some(mut d) = draws {
                d.sort_by(f64::total_cmp);
                lo = Some(percentile(&d, 0.025));
                hi = Some(percentile(&d, 0.975));
            }
        }
        macro_avg.insert(m.as_str().to_string(), MetricValue { point, ci_low: lo, ci_high: hi });
    }
    Ok(MetricReport { labels, macro_avg, threshold_policy: policy, n_bootstrap: n_boot, seed })
}

/// ROC points (fpr, tpr) from (0, 0) to (1, 1), one per distinct score.
pub fn roc_curve(set: &ScoredSet) -> Vec<(f64, f64)> {
    let (p, n) = (set.n_pos().max(1) as f64, set.n_neg().max(1) as f64);
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (_, gp, gn) in tie_groups(set) {
        tp += gp;
        fp += gn;
        pts.push((fp as f64 / n, tp as f64 / p));
    }
    pts
}

/// Precision-recall points (recall, precision), one per distinct score.
pub fn pr_curve(set: &ScoredSet) -> Vec<(f64, f64)> {
    let p = set.n_pos().max(1) as f64;
    let (mut tp, mut fp) = (0u64, 0u64);
    tie_groups(set)
        .into_iter()
        .map(|(_, gp, gn)| {
            tp += gp;
            fp += gn;
            (tp as f64 / p, tp as f64 / (tp + fp) as f64)
        })
        .collect()
}

pub fn curve_csv(header: (&str, &str), points: &[(f64, f64)]) -> String {
    let mut s = format!("{},{}\n", header.0, header.1);
    for (a, b) in points {
        writeln!(s, "{a},{b}").expect("write to string");
    }
    s
}
