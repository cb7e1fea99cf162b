//! Synthetic 12-lead ECGs from a frontal-plane cardiac dipole.
//!
//! The dipole `d(t) = sum_w a_w g_w(t) (cos phi_w, sin phi_w)` is a train of
//! Gaussian wavelets per beat (P, Q, R, S, T). Angles follow the hexaxial
//! convention: 0 deg points at the left arm, +90 deg is inferior.
//! Leads I and II are the dipole projections on 0 and +60 deg plus
//! electrode noise; III, aVR, aVL and aVF are derived from them with the
//! Einthoven/Goldberger identities, as a recording device does. V1..V6 are
//! the fixed combinations in [`PRECORDIAL_WEIGHTS`].
//!
//! Ground truth follows from the generator parameters:
//! mean rate < 60 bpm is sinus bradycardia, > 100 sinus tachycardia,
//! otherwise normal sinus rhythm; an RR coefficient of variation above 0.15
//! yields atrial fibrillation (no P waves, replacing the sinus label);
//! a QRS axis below -30 deg is left axis deviation, above +90 deg right
//! axis deviation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EcgRecord, LabelSet, LabelVocabulary, Manifest, ManifestEntry};
use crate::error::{invalid, Result};
use crate::hexaxial::project_dipole;

pub const STANDARD_LEADS: [&str; 12] =
    ["I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"];

/// (dx, dy) weights of the precordial leads.
pub const PRECORDIAL_WEIGHTS: [(f64, f64); 6] = [
    (-0.40, 0.10),
    (-0.10, 0.35),
    (0.30, 0.50),
    (0.70, 0.45),
    (0.90, 0.30),
    (0.95, 0.15),
];

pub const LABEL_NSR: &str = "normal sinus rhythm";
pub const LABEL_SB: &str = "sinus bradycardia";
pub const LABEL_ST: &str = "sinus tachycardia";
pub const LABEL_AF: &str = "atrial fibrillation";
pub const LABEL_LAD: &str = "left axis deviation";
pub const LABEL_RAD: &str = "right axis deviation";

pub fn synthetic_vocabulary() -> LabelVocabulary {
    LabelVocabulary::new([LABEL_NSR, LABEL_SB, LABEL_ST, LABEL_AF, LABEL_LAD, LABEL_RAD])
        .expect("static vocabulary")
}

const AF_CV_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_records: usize,
    pub fs: f64,
    pub duration_s: f64,
    /// Per-record mean rate is drawn uniformly from this range.
    pub heart_rate_bpm: (f64, f64),
    pub rr_jitter_cv: f64,
    pub mean_qrs_axis_deg: f64,
    /// Per-record axis is drawn uniformly from mean +/- spread.
    pub axis_spread_deg: f64,
    pub records_per_patient: usize,
    pub noise_mv: f64,
    pub baseline_wander_mv: f64,
    pub wander_hz: f64,
    pub mains_mv: f64,
    pub mains_hz: f64,
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_records: 16,
            fs: 500.0,
            duration_s: 10.0,
            heart_rate_bpm: (60.0, 100.0),
            rr_jitter_cv: 0.03,
            mean_qrs_axis_deg: 60.0,
            axis_spread_deg: 0.0,
            records_per_patient: 1,
            noise_mv: 0.01,
            baseline_wander_mv: 0.0,
            wander_hz: 0.2,
            mains_mv: 0.0,
            mains_hz: 50.0,
            id_prefix: "syn".into(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0) || !(self.duration_s > 0.0) {
            return Err(invalid("fs and duration_s must be positive"));
        }
        let (lo, hi) = self.heart_rate_bpm;
        if !(20.0..=250.0).contains(&lo) || !(20.0..=250.0).contains(&hi) || lo > hi {
            return Err(invalid(format!("heart rate range {lo}..{hi} outside [20, 250]")));
        }
        if !(self.rr_jitter_cv >= 0.0) || !(self.axis_spread_deg >= 0.0) || !(self.noise_mv >= 0.0) {
            return Err(invalid("rr_jitter_cv, axis_spread_deg and noise_mv must be non-negative"));
        }
        if self.records_per_patient == 0 {
            return Err(invalid("records_per_patient must be >= 1"));
        }
        Ok(())
    }
}

struct Wavelet {
    center: f64,
    sigma: f64,
    amp: f64,
    angle: f64,
}

struct Rhythm {
    beats: Vec<f64>,
    rr: Vec<f64>,
}

fn beat_times(rng: &mut ChaCha8Rng, hr: f64, cv: f64, duration: f64) -> Rhythm {
    let mean_rr = 60.0 / hr;
    let z = Normal::new(0.0, 1.0).unwrap();
    let mut t = -mean_rr * rng.gen::<f64>();
    let mut beats = Vec::new();
    let mut rr = Vec::new();
    while t < duration + 1.0 {
        beats.push(t);
        let step = (mean_rr * (1.0 + cv * z.sample(rng))).max(0.25 * mean_rr).max(0.2);
        rr.push(step);
        t += step;
    }
    Rhythm { beats, rr }
}

fn gauss(t: f64, w: &Wavelet) -> f64 {
    let u = (t - w.center) / w.sigma;
    w.amp * (-0.5 * u * u).exp()
}

/// Ground-truth labels for one record's generator parameters.
fn truth(vocab: &LabelVocabulary, hr: f64, cv: f64, axis: f64) -> LabelSet {
    let mut names = Vec::new();
    if cv > AF_CV_THRESHOLD {
        names.push(LABEL_AF);
    } else if hr < 60.0 {
        names.push(LABEL_SB);
    } else if hr > 100.0 {
        names.push(LABEL_ST);
    } else {
        names.push(LABEL_NSR);
    }
    if axis < -30.0 {
        names.push(LABEL_LAD);
    } else if axis > 90.0 {
        names.push(LABEL_RAD);
    }
    LabelSet::from_indices(names.iter().map(|n| vocab.index_of(n).unwrap()), vocab.len()).unwrap()
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<(Vec<EcgRecord>, Manifest)> {
    config.validate()?;
    let vocab = synthetic_vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = (config.duration_s * config.fs).round().max(1.0) as usize;
    let noise = Normal::new(0.0, config.noise_mv.max(0.0)).unwrap();
    let mut records = Vec::with_capacity(config.n_records);
    let mut manifest = Manifest::default();

    for idx in 0..config.n_records {
        let (lo, hi) = config.heart_rate_bpm;
        let hr = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let axis = if config.axis_spread_deg > 0.0 {
            config.mean_qrs_axis_deg + rng.gen_range(-config.axis_spread_deg..=config.axis_spread_deg)
        } else {
            config.mean_qrs_axis_deg
        };
        let irregular = config.rr_jitter_cv > AF_CV_THRESHOLD;
        let r_amp = rng.gen_range(0.9..1.5);
        let t_amp = rng.gen_range(0.2..0.4);
        let rhythm = beat_times(&mut rng, hr, config.rr_jitter_cv, config.duration_s);

        let axis_rad = axis.to_radians();
        let mut waves = Vec::with_capacity(rhythm.beats.len() * 5);
        for (&tb, &rr) in rhythm.beats.iter().zip(&rhythm.rr) {
            if !irregular {
                waves.push(Wavelet { center: tb - 0.16, sigma: 0.022, amp: 0.15, angle: 55f64.to_radians() });
            }
            waves.push(Wavelet { center: tb - 0.028, sigma: 0.008, amp: -0.12 * r_amp, angle: axis_rad });
            waves.push(Wavelet { center: tb, sigma: 0.011, amp: r_amp, angle: axis_rad });
            waves.push(Wavelet { center: tb + 0.03, sigma: 0.01, amp: -0.22 * r_amp, angle: axis_rad });
            let qt = 0.3 * rr.clamp(0.3, 1.6).sqrt();
            waves.push(Wavelet { center: tb + qt, sigma: 0.05, amp: t_amp, angle: axis_rad });
        }

        // fibrillatory baseline for irregular rhythms
        let (f_freq, f_phase, f_angle) = (rng.gen_range(5.0..7.0), rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU));
        let wander_phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let mains_phase = rng.gen_range(0.0..std::f64::consts::TAU);

        let mut dx = vec![0.0f64; n];
        let mut dy = vec![0.0f64; n];
        for w in &waves {
            let lo = (((w.center - 5.0 * w.sigma) * config.fs).floor().max(0.0)) as usize;
            let hi = (((w.center + 5.0 * w.sigma) * config.fs).ceil().max(0.0) as usize).min(n);
            let (c, s) = (w.angle.cos(), w.angle.sin());
            for k in lo..hi {
                let g = gauss(k as f64 / config.fs, w);
                dx[k] += g * c;
                dy[k] += g * s;
            }
        }
        if irregular {
            for k in 0..n {
                let t = k as f64 / config.fs;
                let f = 0.04 * (std::f64::consts::TAU * f_freq * t + f_phase).sin();
                dx[k] += f * f_angle.cos();
                dy[k] += f * f_angle.sin();
            }
        }

        let common = |k: usize| -> f64 {
            let t = k as f64 / config.fs;
            config.baseline_wander_mv * (std::f64::consts::TAU * config.wander_hz * t + wander_phase).sin()
                + config.mains_mv * (std::f64::consts::TAU * config.mains_hz * t + mains_phase).sin()
        };

        let mut lead_i = vec![0.0f64; n];
        let mut lead_ii = vec![0.0f64; n];
        for k in 0..n {
            lead_i[k] = project_dipole(dx[k], dy[k], 0.0) + noise.sample(&mut rng) + common(k);
            lead_ii[k] = project_dipole(dx[k], dy[k], 60.0) + noise.sample(&mut rng) + 1.3 * common(k);
        }
        let mut data: Vec<Vec<f32>> = vec![Vec::with_capacity(n); 12];
        for k in 0..n {
            let (i, ii) = (lead_i[k], lead_ii[k]);
            data[0].push(i as f32);
            data[1].push(ii as f32);
            data[2].push((ii - i) as f32);
            data[3].push((-(i + ii) / 2.0) as f32);
            data[4].push((i - ii / 2.0) as f32);
            data[5].push((ii - i / 2.0) as f32);
        }
        for (v, &(a, b)) in PRECORDIAL_WEIGHTS.iter().enumerate() {
            let lead = &mut data[6 + v];
            for k in 0..n {
                lead.push((a * dx[k] + b * dy[k] + noise.sample(&mut rng) + 0.8 * common(k)) as f32);
            }
        }

        let record_id = format!("{}{}-{:05}", config.id_prefix, config.seed, idx);
        let patient_id = format!("{}{}-p{:05}", config.id_prefix, config.seed, idx / config.records_per_patient);
        let mut meta = BTreeMap::new();
        meta.insert("heart_rate_bpm".into(), format!("{hr:.3}"));
        meta.insert("qrs_axis_deg".into(), format!("{axis:.3}"));
        meta.insert("rr_jitter_cv".into(), format!("{}", config.rr_jitter_cv));
        manifest.entries.push(ManifestEntry {
            path: format!("{record_id}.ecgb"),
            record_id: record_id.clone(),
            patient_id: patient_id.clone(),
            labels: truth(&vocab, hr, config.rr_jitter_cv, axis),
            target: Some(hr),
        });
        records.push(EcgRecord {
            record_id,
            patient_id,
            fs: config.fs,
            lead_names: STANDARD_LEADS.iter().map(|s| s.to_string()).collect(),
            data,
            meta,
        });
    }
    Ok((records, manifest))
}

/// Concatenate several generator runs. Each config should carry a distinct
/// seed or id prefix so record ids stay unique.
pub fn generate_mixture(configs: &[SynthConfig]) -> Result<(Vec<EcgRecord>, Manifest)> {
    let mut records = Vec::new();
    let mut manifest = Manifest::default();
    for c in configs {
        let (r, m) = generate_synthetic(c)?;
        records.extend(r);
        manifest.entries.extend(m.entries);
    }
    manifest.validate(&synthetic_vocabulary())?;
    Ok((records, manifest))
}
