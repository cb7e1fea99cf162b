use sha2::{Digest, Sha256};

use super::Manifest;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self> {
        let r = Self { train, valid, test };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(invalid(format!("split ratios must be positive, got {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("split ratios must sum to 1, got {parts:?}")));
        }
        Ok(())
    }
}

/// Map (patient_id, seed) to a stable point in [0, 1).
pub fn patient_unit(patient_id: &str, seed: u64) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(patient_id.as_bytes());
    let digest = h.finalize();
    let word = u64::from_le_bytes(digest[..8].try_into().unwrap());
    // top 53 bits give an exactly representable fraction
    (word >> 11) as f64 / (1u64 << 53) as f64
}

/// Partition a manifest into train/valid/test by patient.
pub fn patient_split(
    manifest: &Manifest,
    ratios: SplitRatios,
    seed: u64,
) -> Result<(Manifest, Manifest, Manifest)> {
    ratios.validate()?;
    if manifest.is_empty() {
        return Err(invalid("cannot split an empty manifest"));
    }
    let (mut train, mut valid, mut test) = (Manifest::default(), Manifest::default(), Manifest::default());
    let cut_valid = ratios.train + ratios.valid;
    for e in &manifest.entries {
        let u = patient_unit(&e.patient_id, seed);
        let dest = if u < ratios.train {
            &mut train
        } else if u < cut_valid {
            &mut valid
        } else {
            &mut test
        };
        dest.entries.push(e.clone());
    }
    Ok((train, valid, test))
}
