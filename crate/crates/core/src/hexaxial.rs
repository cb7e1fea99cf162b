//! Frontal-plane lead geometry.
//!
//! Angles use the hexaxial convention: lead I at 0 deg, positive angles
//! rotate toward the feet. Every frontal lead used here is a linear
//! combination of leads I and II:
//!
//! | lead | angle | I    | II   |
//! |------|-------|------|------|
//! | I    | 0     | 1    | 0    |
//! | -aVR | +30   | 1/2  | 1/2  |
//! | II   | +60   | 0    | 1    |
//! | aVF  | +90   | -1/2 | 1    |
//! | aVL  | -30   | 1    | -1/2 |
//! | -III | -60   | 1    | -1   |
//! | -aVF | -90   | 1/2  | -1   |
//!
//! The Goldberger leads (aVL, -aVR, aVF, -aVF) come out at sqrt(3)/2 of the
//! ideal projection amplitude; the raw combinations are kept.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::recordio::EcgRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrontalLead {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "II")]
    II,
    #[serde(rename = "-III")]
    NegIII,
    #[serde(rename = "aVL")]
    AVL,
    #[serde(rename = "-aVR")]
    NegAVR,
    #[serde(rename = "aVF")]
    AVF,
    #[serde(rename = "-aVF")]
    NegAVF,
}

impl FrontalLead {
    pub const ALL: [FrontalLead; 7] = [
        FrontalLead::I,
        FrontalLead::II,
        FrontalLead::NegIII,
        FrontalLead::AVL,
        FrontalLead::NegAVR,
        FrontalLead::AVF,
        FrontalLead::NegAVF,
    ];

    /// The six leads that may replace lead I during augmentation.
    pub const AUGMENTED: [FrontalLead; 6] = [
        FrontalLead::AVL,
        FrontalLead::NegAVR,
        FrontalLead::II,
        FrontalLead::NegIII,
        FrontalLead::AVF,
        FrontalLead::NegAVF,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FrontalLead::I => "I",
            FrontalLead::II => "II",
            FrontalLead::NegIII => "-III",
            FrontalLead::AVL => "aVL",
            FrontalLead::NegAVR => "-aVR",
            FrontalLead::AVF => "aVF",
            FrontalLead::NegAVF => "-aVF",
        }
    }

    /// Accepts ASCII '-' or the unicode minus sign.
    pub fn from_name(name: &str) -> Result<Self> {
        let n = name.trim().replace('\u{2212}', "-");
        FrontalLead::ALL
            .into_iter()
            .find(|l| l.name() == n)
            .ok_or_else(|| invalid(format!("unknown frontal lead {name:?}")))
    }

    pub fn angle_deg(self) -> f64 {
        match self {
            FrontalLead::I => 0.0,
            FrontalLead::NegAVR => 30.0,
            FrontalLead::II => 60.0,
            FrontalLead::AVL => -30.0,
            FrontalLead::NegIII => -60.0,
            FrontalLead::AVF => 90.0,
            FrontalLead::NegAVF => -90.0,
        }
    }

    /// (coefficient on lead I, coefficient on lead II)
    pub fn coefficients(self) -> (f64, f64) {
        match self {
            FrontalLead::I => (1.0, 0.0),
            FrontalLead::II => (0.0, 1.0),
            FrontalLead::NegIII => (1.0, -1.0),
            FrontalLead::AVL => (1.0, -0.5),
            FrontalLead::NegAVR => (0.5, 0.5),
            FrontalLead::AVF => (-0.5, 1.0),
            FrontalLead::NegAVF => (0.5, -1.0),
        }
    }

    pub fn is_goldberger(self) -> bool {
        matches!(self, FrontalLead::AVL | FrontalLead::NegAVR | FrontalLead::AVF | FrontalLead::NegAVF)
    }
}

impl std::fmt::Display for FrontalLead {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Serialize)]
struct LeadTableRow {
    name: &'static str,
    angle_deg: f64,
    coeff_i: f64,
    coeff_ii: f64,
}

/// The angle/coefficient table as a JSON array, for cross-checking.
pub fn lead_table_json() -> String {
    let rows: Vec<LeadTableRow> = FrontalLead::ALL
        .iter()
        .map(|&l| {
            let (ci, cii) = l.coefficients();
            LeadTableRow { name: l.name(), angle_deg: l.angle_deg(), coeff_i: ci, coeff_ii: cii }
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("static table")
}

/// Projection of a frontal dipole onto a lead axis at `angle_deg`.
#[inline]
pub fn project_dipole(dx: f64, dy: f64, angle_deg: f64) -> f64 {
    let a = angle_deg.to_radians();
    dx * a.cos() + dy * a.sin()
}

pub fn derive_lead(name: &str, lead_i: &[f32], lead_ii: &[f32]) -> Result<Vec<f32>> {
    derive_frontal(FrontalLead::from_name(name)?, lead_i, lead_ii)
}

pub fn derive_frontal(lead: FrontalLead, lead_i: &[f32], lead_ii: &[f32]) -> Result<Vec<f32>> {
    if lead_i.len() != lead_ii.len() {
        return Err(shape(format!("lead I has {} samples, lead II {}", lead_i.len(), lead_ii.len())));
    }
    let (ci, cii) = lead.coefficients();
    let (ci, cii) = (ci as f32, cii as f32);
    Ok(lead_i.iter().zip(lead_ii).map(|(&a, &b)| ci * a + cii * b).collect())
}

/// f64 variant used by the geometry checks.
pub fn derive_frontal_f64(lead: FrontalLead, lead_i: &[f64], lead_ii: &[f64]) -> Result<Vec<f64>> {
    if lead_i.len() != lead_ii.len() {
        return Err(shape("lead I and II lengths differ"));
    }
    let (ci, cii) = lead.coefficients();
    Ok(lead_i.iter().zip(lead_ii).map(|(&a, &b)| ci * a + cii * b).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionCheck {
    pub correlation: f64,
    pub scale: f64,
}

/// Compare the lead derived from ideal I/II projections of a dipole with
/// the direct projection on the lead's hexaxial angle.
pub fn verify_projection(lead: FrontalLead, dx: &[f64], dy: &[f64]) -> Result<ProjectionCheck> {
    if dx.len() != dy.len() || dx.len() < 2 {
        return Err(shape("dipole components must have equal length >= 2"));
    }
    let proj = |angle: f64| -> Vec<f64> { dx.iter().zip(dy).map(|(&x, &y)| project_dipole(x, y, angle)).collect() };
    let ideal_i = proj(0.0);
    let ideal_ii = proj(60.0);
    let derived = derive_frontal_f64(lead, &ideal_i, &ideal_ii)?;
    let direct = proj(lead.angle_deg());

    let n = direct.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (md, mp) = (mean(&derived), mean(&direct));
    let (mut sdp, mut sdd, mut spp) = (0.0, 0.0, 0.0);
    for (&a, &b) in derived.iter().zip(&direct) {
        sdp += (a - md) * (b - mp);
        sdd += (a - md) * (a - md);
        spp += (b - mp) * (b - mp);
    }
    let energy: f64 = direct.iter().map(|v| v * v).sum::<f64>() / n;
    if spp <= 1e-12 * n * energy.max(1e-300) || sdd <= 0.0 {
        return Err(Error::Numerical("degenerate dipole: projection is constant".into()));
    }
    let correlation = sdp / (sdd.sqrt() * spp.sqrt());
    let scale = derived.iter().zip(&direct).map(|(a, b)| a * b).sum::<f64>()
        / direct.iter().map(|b| b * b).sum::<f64>();
    Ok(ProjectionCheck { correlation, scale })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub p_augment: f64,
    pub candidates: Vec<FrontalLead>,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self { p_augment: 0.5, candidates: FrontalLead::AUGMENTED.to_vec(), seed: 0 }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_augment) {
            return Err(invalid(format!("p_augment {} outside [0, 1]", self.p_augment)));
        }
        if self.p_augment > 0.0 && self.candidates.is_empty() {
            return Err(invalid("augmentation needs at least one candidate lead"));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Lead I with probability 1 - p, otherwise a uniform candidate.
    pub fn choose<R: Rng + ?Sized>(&self, rng: &mut R) -> FrontalLead {
        if rng.gen::<f64>() < self.p_augment {
            self.candidates[rng.gen_range(0..self.candidates.len())]
        } else {
            FrontalLead::I
        }
    }
}

pub fn sample_training_lead<R: Rng + ?Sized>(
    record: &EcgRecord,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<(Vec<f32>, FrontalLead)> {
    policy.validate()?;
    let lead_i = record.lead("I").ok_or_else(|| invalid("record has no lead I"))?;
    let lead_ii = record.lead("II").ok_or_else(|| invalid("record has no lead II"))?;
    let chosen = policy.choose(rng);
    Ok((derive_frontal(chosen, lead_i, lead_ii)?, chosen))
}
