//! Second-order sections designed with the prewarped bilinear transform.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Lowpass,
    Highpass,
    Notch,
}

/// Transfer function `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
    pub kind: FilterKind,
    pub fc: f64,
    pub fs: f64,
    pub q: f64,
}

/// Butterworth low/high-pass (analog Q = 1/sqrt 2) or a band-reject notch
/// with quality `q`. `q` is ignored for the Butterworth kinds.
pub fn design_biquad(kind: FilterKind, fc: f64, fs: f64, q: f64) -> Result<BiquadCoeffs> {
    if !(fs > 0.0) || !fs.is_finite() {
        return Err(invalid(format!("sampling rate must be positive, got {fs}")));
    }
    if !(fc > 0.0) {
        return Err(invalid(format!("cutoff must be positive, got {fc}")));
    }
    if fc >= fs / 2.0 {
        return Err(invalid(format!("cutoff at or above Nyquist ({fc} Hz >= {} Hz)", fs / 2.0)));
    }
    let q = match kind {
        FilterKind::Notch => {
            if !(q > 0.0) {
                return Err(invalid(format!("notch quality must be positive, got {q}")));
            }
            q
        }
        _ => FRAC_1_SQRT_2,
    };
    let k = (PI * fc / fs).tan();
    let k2 = k * k;
    let norm = 1.0 / (1.0 + k / q + k2);
    let a1 = 2.0 * (k2 - 1.0) * norm;
    let a2 = (1.0 - k / q + k2) * norm;
    let (b0, b1, b2) = match kind {
        FilterKind::Lowpass => (k2 * norm, 2.0 * k2 * norm, k2 * norm),
        FilterKind::Highpass => (norm, -2.0 * norm, norm),
        FilterKind::Notch => ((1.0 + k2) * norm, a1, (1.0 + k2) * norm),
    };
    let c = BiquadCoeffs { b0, b1, b2, a1, a2, kind, fc, fs, q };
    if !c.is_stable() {
        return Err(Error::Numerical(format!("designed filter is unstable: {c:?}")));
    }
    Ok(c)
}

impl BiquadCoeffs {
    /// Magnitudes of the two poles.
    pub fn pole_magnitudes(&self) -> [f64; 2] {
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc >= 0.0 {
            let s = disc.sqrt();
            [((-self.a1 + s) / 2.0).abs(), ((-self.a1 - s) / 2.0).abs()]
        } else {
            // complex pair, |p|^2 = a2
            let m = self.a2.sqrt();
            [m, m]
        }
    }

    pub fn is_stable(&self) -> bool {
        self.pole_magnitudes().iter().all(|&m| m < 1.0)
    }

    /// |H(e^{jw})| at frequency `f` Hz.
    pub fn magnitude(&self, f: f64) -> f64 {
        let w = 2.0 * PI * f / self.fs;
        let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
        let nr = self.b0 + self.b1 * c1 + self.b2 * c2;
        let ni = -(self.b1 * s1 + self.b2 * s2);
        let dr = 1.0 + self.a1 * c1 + self.a2 * c2;
        let di = -(self.a1 * s1 + self.a2 * s2);
        (nr.hypot(ni)) / (dr.hypot(di))
    }

    pub fn magnitude_db(&self, f: f64) -> f64 {
        20.0 * self.magnitude(f).log10()
    }
}

/// Transposed direct-form II with zero initial state. With `zero_phase` the
/// filter runs forward then backward.
pub fn apply_iir(series: &[f64], c: &BiquadCoeffs, zero_phase: bool) -> Result<Vec<f64>> {
    if series.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("NaN in filter input".into()));
    }
    let mut out = series.to_vec();
    run_tdf2(&mut out, c);
    if zero_phase {
        out.reverse();
        run_tdf2(&mut out, c);
        out.reverse();
    }
    Ok(out)
}

fn run_tdf2(x: &mut [f64], c: &BiquadCoeffs) {
    let (mut s1, mut s2) = (0.0, 0.0);
    for v in x.iter_mut() {
        let input = *v;
        let y = c.b0 * input + s1;
        s1 = c.b1 * input - c.a1 * y + s2;
        s2 = c.b2 * input - c.a2 * y;
        *v = y;
    }
}
