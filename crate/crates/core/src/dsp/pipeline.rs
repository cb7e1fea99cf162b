use serde::{Deserialize, Serialize};

use super::{apply_iir, design_biquad, resample_linear, segment_windows, window_len, zscore_in_place, FilterKind};
use crate::error::{invalid, Result};
use crate::recordio::EcgRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub target_fs: f64,
    pub hp_cutoff: f64,
    pub lp_cutoff: f64,
    pub notch_freqs: Vec<f64>,
    pub notch_q: f64,
    pub window_s: f64,
    pub zero_phase: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_fs: 500.0,
            hp_cutoff: 0.5,
            lp_cutoff: 50.0,
            notch_freqs: vec![50.0, 60.0],
            notch_q: 30.0,
            window_s: 10.0,
            zero_phase: false,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let nyq = self.target_fs / 2.0;
        if !(self.hp_cutoff > 0.0 && self.hp_cutoff < self.lp_cutoff && self.lp_cutoff < nyq) {
            return Err(invalid(format!(
                "need 0 < hp_cutoff < lp_cutoff < target_fs/2, got {} / {} / {nyq}",
                self.hp_cutoff, self.lp_cutoff
            )));
        }
        if !(self.window_s > 0.0) || window_len(self.target_fs, self.window_s) == 0 {
            return Err(invalid("window_s must give at least one sample"));
        }
        if let Some(f) = self.notch_freqs.iter().find(|&&f| !(f > 0.0 && f < nyq)) {
            return Err(invalid(format!("notch at {f} Hz outside (0, {nyq})")));
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        window_len(self.target_fs, self.window_s)
    }
}

/// A fixed-length multi-channel window, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub record_id: String,
    pub window_index: usize,
    pub channel_names: Vec<String>,
    pub n_samples: usize,
    pub data: Vec<f32>,
}

impl Segment {
    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        &mut self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn channel_by_name(&self, name: &str) -> Option<&[f32]> {
        self.channel_names.iter().position(|n| n == name).map(|c| self.channel(c))
    }

    /// Z-score every channel in place (degenerate channels become zero).
    pub fn normalize(&mut self) {
        let n = self.n_samples;
        let mut buf = vec![0.0f64; n];
        for c in 0..self.n_channels() {
            let ch = self.channel_mut(c);
            buf.iter_mut().zip(ch.iter()).for_each(|(b, &v)| *b = v as f64);
            zscore_in_place(&mut buf);
            ch.iter_mut().zip(&buf).for_each(|(v, &b)| *v = b as f32);
        }
    }
}

/// Resample then high-pass, low-pass and each notch, in that order.
pub fn filter_chain(series: &[f64], fs_in: f64, cfg: &PreprocessConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let fs = cfg.target_fs;
    let mut x = resample_linear(series, fs_in, fs)?;
    let hp = design_biquad(FilterKind::Highpass, cfg.hp_cutoff, fs, 0.0)?;
    x = apply_iir(&x, &hp, cfg.zero_phase)?;
    let lp = design_biquad(FilterKind::Lowpass, cfg.lp_cutoff, fs, 0.0)?;
    x = apply_iir(&x, &lp, cfg.zero_phase)?;
    for &f in &cfg.notch_freqs {
        let notch = design_biquad(FilterKind::Notch, f, fs, cfg.notch_q)?;
        x = apply_iir(&x, &notch, cfg.zero_phase)?;
    }
    Ok(x)
}

/// Everything except the final z-score: filtered, lead-arranged windows
/// in millivolts. Absent leads are zero-filled.
pub fn preprocess_raw(record: &EcgRecord, cfg: &PreprocessConfig, required_leads: &[&str]) -> Result<Vec<Segment>> {
    record.validate()?;
    cfg.validate()?;
    if !required_leads.iter().any(|l| record.lead(l).is_some()) {
        return Err(invalid(format!("no usable leads in record {:?}", record.record_id)));
    }
    let mut channels: Vec<Option<Vec<Vec<f64>>>> = Vec::with_capacity(required_leads.len());
    let mut n_windows = 0;
    for name in required_leads {
        match record.lead(name) {
            Some(raw) => {
                let x: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
                let filtered = filter_chain(&x, record.fs, cfg)?;
                let windows = segment_windows(&filtered, cfg.target_fs, cfg.window_s);
                n_windows = n_windows.max(windows.len());
                channels.push(Some(windows));
            }
            None => channels.push(None),
        }
    }
    let w = cfg.window_samples();
    let names: Vec<String> = required_leads.iter().map(|s| s.to_string()).collect();
    let mut out = Vec::with_capacity(n_windows);
    for wi in 0..n_windows {
        let mut data = vec![0.0f32; w * required_leads.len()];
        for (c, ch) in channels.iter().enumerate() {
            if let Some(windows) = ch {
                if let Some(win) = windows.get(wi) {
                    data[c * w..(c + 1) * w].iter_mut().zip(win).for_each(|(d, &v)| *d = v as f32);
                }
            }
        }
        out.push(Segment {
            record_id: record.record_id.clone(),
            window_index: wi,
            channel_names: names.clone(),
            n_samples: w,
            data,
        });
    }
    Ok(out)
}

/// Full chain: resample, high-pass, low-pass, notches, lead arrangement
/// with zero fill, windowing, per-window z-score.
pub fn preprocess(record: &EcgRecord, cfg: &PreprocessConfig, required_leads: &[&str]) -> Result<Vec<Segment>> {
    let mut segs = preprocess_raw(record, cfg, required_leads)?;
    segs.iter_mut().for_each(Segment::normalize);
    Ok(segs)
}
