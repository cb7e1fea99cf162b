//! Multi-label objectives on logits: the positive-unlabeled polynomial
//! loss and the binary cross-entropy and focal baselines.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::nnet::{Matrix, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Pu,
    Bce,
    Focal,
}

impl std::str::FromStr for LossKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pu" => Ok(Self::Pu),
            "bce" => Ok(Self::Bce),
            "focal" => Ok(Self::Focal),
            other => Err(invalid(format!("unknown loss kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Mean,
    Sum,
}

/// Which terms the polynomial applies to.
///
/// `Mirrored`: -(γ-p)p² on positives and -(γ-q)q², q = 1-p, on unlabeled
/// entries. `BcePositives`: -ln p on positives, the mirrored polynomial on
/// unlabeled entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PuMapping {
    Mirrored,
    BcePositives,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub gamma_pu: f64,
    pub gamma_focal: f64,
    pub reduction: Reduction,
    pub pu_mapping: PuMapping,
    /// Permit 0 < gamma_pu <= 1, where the positive term is no longer
    /// monotone (used by the gamma sweep).
    pub allow_nonmonotone: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { kind: LossKind::Pu, gamma_pu: 1.5, gamma_focal: 2.0, reduction: Reduction::Mean, pu_mapping: PuMapping::Mirrored, allow_nonmonotone: false }
    }
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let floor = if self.allow_nonmonotone { 0.0 } else { 1.0 };
        if !(self.gamma_pu > floor) || !self.gamma_pu.is_finite() {
            return Err(invalid(format!("gamma_pu must be > {floor}, got {}", self.gamma_pu)));
        }
        if !(self.gamma_focal >= 0.0) || !self.gamma_focal.is_finite() {
            return Err(invalid(format!("gamma_focal must be >= 0, got {}", self.gamma_focal)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub value: f64,
    pub dlogits: Matrix<T>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn pu_positive(p: f64, gamma: f64) -> f64 {
    -(gamma - p) * p * p
}

pub fn pu_positive_dp(p: f64, gamma: f64) -> f64 {
    3.0 * p * p - 2.0 * gamma * p
}

pub fn pu_unlabeled(p: f64, gamma: f64) -> f64 {
    pu_positive(1.0 - p, gamma)
}

pub fn pu_unlabeled_dp(p: f64, gamma: f64) -> f64 {
    let q = 1.0 - p;
    2.0 * gamma * q - 3.0 * q * q
}

/// (loss, dloss/dz) for one element.
fn element(cfg: &LossConfig, z: f64, y: bool) -> (f64, f64) {
    let p = sigmoid(z);
    let q = sigmoid(-z);
    match cfg.kind {
        LossKind::Pu => {
            let g = cfg.gamma_pu;
            match (y, cfg.pu_mapping) {
                (true, PuMapping::Mirrored) => (-(g - p) * p * p, (3.0 * p * p - 2.0 * g * p) * p * q),
                (true, PuMapping::BcePositives) => (softplus(-z), -q),
                (false, _) => (-(g - q) * q * q, (2.0 * g * q - 3.0 * q * q) * p * q),
            }
        }
        LossKind::Bce => (softplus(z) - if y { z } else { 0.0 }, p - if y { 1.0 } else { 0.0 }),
        LossKind::Focal => {
            let g = cfg.gamma_focal;
            if y {
                let s = softplus(-z);
                let w = q.powf(g);
                (w * s, -w * (g * p * s + q))
            } else {
                let t = softplus(z);
                let w = p.powf(g);
                (w * t, w * (g * q * t + p))
            }
        }
    }
}

/// Loss and logit gradient. `labels` is a row-major multi-hot matrix with
/// the same shape as `logits`; 1 marks a positive, 0 an unlabeled entry.
pub fn compute_loss<T: Real>(cfg: &LossConfig, logits: &Matrix<T>, labels: &[f32]) -> Result<LossOutput<T>> {
    cfg.validate()?;
    if labels.len() != logits.data.len() {
        return Err(shape(format!("{} labels for {}x{} logits", labels.len(), logits.rows, logits.cols)));
    }
    if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(invalid(format!("label value {bad} outside {{0, 1}}")));
    }
    let n = logits.data.len();
    let scale = match cfg.reduction {
        Reduction::Mean => 1.0 / n.max(1) as f64,
        Reduction::Sum => 1.0,
    };
    let mut total = 0.0;
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    for ((z, &y), g) in logits.data.iter().zip(labels).zip(grad.data.iter_mut()) {
        let (l, d) = element(cfg, z.f64(), y == 1.0);
        total += l;
        *g = T::of(d * scale);
    }
    let value = total * scale;
    if !value.is_finite() || !grad.data.iter().all(|v| v.is_finite()) {
        return Err(crate::Error::Numerical("non-finite loss".into()));
    }
    Ok(LossOutput { value, dlogits: grad })
}

pub fn pu_loss<T: Real>(logits: &Matrix<T>, labels: &[f32], gamma: f64) -> Result<LossOutput<T>> {
    compute_loss(&LossConfig { gamma_pu: gamma, ..LossConfig::new(LossKind::Pu) }, logits, labels)
}

pub fn baseline_loss<T: Real>(kind: LossKind, logits: &Matrix<T>, labels: &[f32], gamma_focal: f64) -> Result<LossOutput<T>> {
    if kind == LossKind::Pu {
        return Err(invalid("baseline loss must be bce or focal"));
    }
    compute_loss(&LossConfig { gamma_focal, ..LossConfig::new(kind) }, logits, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn one(kind: LossKind, p: f64, y: f32) -> f64 {
        let m = Matrix::from_vec(1, 1, vec![logit(p)]).unwrap();
        compute_loss(&LossConfig::new(kind), &m, &[y]).unwrap().value
    }

    #[test]
    fn polynomial_values() {
        let g = 1.5;
        assert_eq!(pu_positive(1.0, g), -0.5);
        assert_eq!(pu_positive(0.0, g), 0.0);
        assert_eq!(pu_positive(0.5, g), -0.25);
        assert_eq!(pu_unlabeled(1.0, g), 0.0);
        assert_eq!(pu_unlabeled(0.0, g), -0.5);
        assert_eq!(pu_positive_dp(0.5, g), -0.75);
        assert!((one(LossKind::Pu, 0.5, 1.0) + 0.25).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_finite_difference_in_p() {
        let (g, h) = (1.5, 1e-6);
        for &p in &[0.1, 0.5, 0.77, 0.99] {
            let fd = (pu_positive(p + h, g) - pu_positive(p - h, g)) / (2.0 * h);
            assert!((fd - pu_positive_dp(p, g)).abs() < 1e-8);
            let fd = (pu_unlabeled(p + h, g) - pu_unlabeled(p - h, g)) / (2.0 * h);
            assert!((fd - pu_unlabeled_dp(p, g)).abs() < 1e-8);
        }
    }

    #[test]
    fn near_one_negatives_are_damped() {
        let at99 = pu_unlabeled_dp(0.99, 1.5).abs();
        let at50 = pu_unlabeled_dp(0.5, 1.5).abs();
        assert!((at99 - 0.0297).abs() < 1e-12);
        assert!((at50 - 0.75).abs() < 1e-12);
        assert!(at99 < at50);
        assert!(pu_unlabeled_dp(1.0 - 1e-9, 1.5).abs() < 1e-8);
        assert_eq!(pu_positive_dp(0.0, 1.5), 0.0);
        assert!(pu_positive_dp(1.0, 1.5).abs() < 1e-15);
    }

    #[test]
    fn monotone_on_grid() {
        let g = 1.5;
        let grid: Vec<f64> = (1..1000).map(|i| i as f64 * 1e-3).collect();
        for w in grid.windows(2) {
            assert!(pu_positive(w[1], g) < pu_positive(w[0], g));
            assert!(pu_unlabeled(w[1], g) > pu_unlabeled(w[0], g));
        }
    }

    #[test]
    fn baseline_examples() {
        assert!((one(LossKind::Bce, 0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((one(LossKind::Focal, 0.9, 1.0) - 0.01 * -(0.9f64).ln()).abs() < 1e-12);
        assert!((one(LossKind::Focal, 0.9, 1.0) - 0.00105361).abs() < 5e-9);
    }

    #[test]
    fn focal_without_focusing_is_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let z: f64 = rng.gen_range(-30.0..30.0);
            for y in [false, true] {
                let f = element(&LossConfig { gamma_focal: 0.0, ..LossConfig::new(LossKind::Focal) }, z, y);
                let b = element(&LossConfig::new(LossKind::Bce), z, y);
                assert!((f.0 - b.0).abs() < 1e-12 && (f.1 - b.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let m = Matrix::from_vec(1, 4, vec![800.0, -800.0, 800.0, -800.0]).unwrap();
        for kind in [LossKind::Pu, LossKind::Bce, LossKind::Focal] {
            let out = compute_loss(&LossConfig::new(kind), &m, &[1.0, 1.0, 0.0, 0.0]).unwrap();
            assert!(out.value.is_finite());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = Matrix::from_vec(1, 2, vec![0.0f64, 0.0]).unwrap();
        assert!(pu_loss(&m, &[1.0, 0.5], 1.5).is_err());
        assert!(pu_loss(&m, &[1.0], 1.5).is_err());
        assert!(pu_loss(&m, &[1.0, 0.0], 1.0).is_err());
        let low = LossConfig { gamma_pu: 0.5, allow_nonmonotone: true, ..LossConfig::default() };
        assert!(compute_loss(&low, &m, &[1.0, 0.0]).is_ok());
        assert!(baseline_loss(LossKind::Pu, &m, &[1.0, 0.0], 2.0).is_err());
        assert!("hinge".parse::<LossKind>().is_err());
    }

    #[test]
    fn sum_is_mean_times_count() {
        let m = Matrix::from_vec(2, 3, vec![0.3, -1.0, 2.0, 0.1, 0.0, -0.4]).unwrap();
        let y = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let mean = compute_loss(&LossConfig::new(LossKind::Pu), &m, &y).unwrap();
        let sum = compute_loss(&LossConfig { reduction: Reduction::Sum, ..LossConfig::new(LossKind::Pu) }, &m, &y).unwrap();
        assert!((sum.value - 6.0 * mean.value).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn gradients_match_finite_differences(
            zs in prop::collection::vec(-6.0f64..6.0, 12),
            ys in prop::collection::vec(any::<bool>(), 12),
            kind in prop_oneof![Just(LossKind::Pu), Just(LossKind::Bce), Just(LossKind::Focal)],
            mapping in prop_oneof![Just(PuMapping::Mirrored), Just(PuMapping::BcePositives)],
            gf in 0.0f64..3.0,
        ) {
            let cfg = LossConfig { gamma_focal: gf, pu_mapping: mapping, ..LossConfig::new(kind) };
            let labels: Vec<f32> = ys.iter().map(|&b| b as u8 as f32).collect();
            let m = Matrix::from_vec(3, 4, zs.clone()).unwrap();
            let out = compute_loss(&cfg, &m, &labels).unwrap();
            let h = 1e-6;
            for i in 0..12 {
                let mut up = m.clone();
                up.data[i] += h;
                let mut dn = m.clone();
                dn.data[i] -= h;
                let fd = (compute_loss(&cfg, &up, &labels).unwrap().value - compute_loss(&cfg, &dn, &labels).unwrap().value) / (2.0 * h);
                let an = out.dlogits.data[i];
                prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
            }
        }

        #[test]
        fn column_permutation_invariance(
            zs in prop::collection::vec(-5.0f64..5.0, 8),
            ys in prop::collection::vec(any::<bool>(), 8),
        ) {
            let labels: Vec<f32> = ys.iter().map(|&b| b as u8 as f32).collect();
            let perm = [3, 0, 2, 1];
            let pz: Vec<f64> = (0..2).flat_map(|r| perm.iter().map(move |&c| (r, c))).map(|(r, c)| zs[r * 4 + c]).collect();
            let py: Vec<f32> = (0..2).flat_map(|r| perm.iter().map(move |&c| (r, c))).map(|(r, c)| labels[r * 4 + c]).collect();
            let a = pu_loss(&Matrix::from_vec(2, 4, zs).unwrap(), &labels, 1.5).unwrap().value;
            let b = pu_loss(&Matrix::from_vec(2, 4, pz).unwrap(), &py, 1.5).unwrap().value;
            prop_assert!((a - b).abs() < 1e-14);
        }
    }
}
