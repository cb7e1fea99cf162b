use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MetricName, ScoredSet};
use crate::error::{invalid, Error, Result};

pub const DEFAULT_N_BOOT: usize = 1000;
const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Linear-interpolated percentile of sorted values, q in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Independent stream per resample index.
pub(crate) fn resample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draw record indices until `accept` holds, up to a fixed number of tries.
pub(crate) fn draw_indices(n: usize, rng: &mut ChaCha8Rng, mut accept: impl FnMut(&[usize]) -> bool) -> Option<Vec<usize>> {
    for _ in 0..MAX_REDRAWS {
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        if accept(&idx) {
            return Some(idx);
        }
    }
    None
}

/// Percentile interval (2.5, 97.5) from record-level resampling.
pub fn bootstrap_ci(set: &ScoredSet, metric: MetricName, threshold: f64, n_boot: usize, seed: u64) -> Result<Interval> {
    let point = metric
        .evaluate(set, threshold)
        .ok_or_else(|| Error::Undefined(format!("{} undefined on the full set", metric.as_str())))?;
    if n_boot == 0 {
        return Err(invalid("n_boot must be >= 1"));
    }
    let draws: Vec<Option<f64>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = resample_rng(seed, b);
            let mut value = None;
            draw_indices(set.len(), &mut rng, |idx| {
                value = metric.evaluate(&set.select(idx), threshold);
                value.is_some()
            })?;
            value
        })
        .collect();
    let mut vals = draws
        .into_iter()
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| Error::Undefined(format!("{} undefined on too many resamples", metric.as_str())))?;
    vals.sort_by(f64::total_cmp);
    Ok(Interval { point, ci_low: percentile(&vals, 0.025), ci_high: percentile(&vals, 0.975) })
}
