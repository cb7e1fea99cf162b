/// Channels whose population std falls below this are zeroed.
pub const ZSCORE_MIN_STD: f64 = 1e-8;

pub fn window_len(fs: f64, window_s: f64) -> usize {
    (window_s * fs).round() as usize
}

/// Non-overlapping windows of `round(window_s * fs)` samples; the trailing
/// remainder is right-padded with zeros.
pub fn segment_windows(series: &[f64], fs: f64, window_s: f64) -> Vec<Vec<f64>> {
    let w = window_len(fs, window_s);
    if series.is_empty() || w == 0 {
        return Vec::new();
    }
    series
        .chunks(w)
        .map(|chunk| {
            let mut v = chunk.to_vec();
            v.resize(w, 0.0);
            v
        })
        .collect()
}

/// Per-channel `(x - mean) / std` with population std.
pub fn zscore_in_place(channel: &mut [f64]) {
    if channel.is_empty() {
        return;
    }
    let n = channel.len() as f64;
    let mean = channel.iter().sum::<f64>() / n;
    let var = channel.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < ZSCORE_MIN_STD {
        channel.iter_mut().for_each(|v| *v = 0.0);
    } else {
        channel.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
}

pub fn zscore(channel: &[f64]) -> Vec<f64> {
    let mut v = channel.to_vec();
    zscore_in_place(&mut v);
    v
}
