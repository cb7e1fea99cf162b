use crate::error::{invalid, Result};

/// Linear-interpolation resampling. Output sample k sits at time
/// k / fs_out; the output covers the input span, so
/// `n_out = floor((n_in - 1) * fs_out / fs_in) + 1`.
pub fn resample_linear(series: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>> {
    if !(fs_in > 0.0 && fs_out > 0.0) || !fs_in.is_finite() || !fs_out.is_finite() {
        return Err(invalid(format!("sampling rates must be positive, got {fs_in} -> {fs_out}")));
    }
    if series.len() <= 1 || fs_in == fs_out {
        return Ok(series.to_vec());
    }
    let n_in = series.len();
    let span = (n_in - 1) as f64 * fs_out / fs_in;
    // guard against (n-1)*a/b landing a hair below an integer
    let n_out = (span + 1e-9).floor() as usize + 1;
    let ratio = fs_in / fs_out;
    let mut out = Vec::with_capacity(n_out);
    for k in 0..n_out {
        let pos = k as f64 * ratio;
        let i = pos.floor() as usize;
        if i >= n_in - 1 {
            out.push(series[n_in - 1]);
            continue;
        }
        let frac = pos - i as f64;
        out.push(series[i] + frac * (series[i + 1] - series[i]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn doubling_rate() {
        assert_eq!(resample_linear(&[0.0, 1.0], 1.0, 2.0).unwrap(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn identity_and_short_series() {
        let x = vec![3.0, -1.0, 2.5];
        assert_eq!(resample_linear(&x, 360.0, 360.0).unwrap(), x);
        assert_eq!(resample_linear(&[7.0], 100.0, 500.0).unwrap(), vec![7.0]);
        assert!(resample_linear(&x, 0.0, 500.0).is_err());
        assert!(resample_linear(&x, 100.0, -1.0).is_err());
    }

    #[test]
    fn length_rule() {
        for (n, a, b) in [(5000usize, 250.0, 500.0), (3600, 360.0, 500.0), (1000, 500.0, 125.0), (7, 3.0, 2.0)] {
            let y = resample_linear(&vec![0.0; n], a, b).unwrap();
            let want = (((n - 1) as f64 * b / a) + 1e-9).floor() as usize + 1;
            assert_eq!(y.len(), want);
        }
        assert_eq!(resample_linear(&vec![0.0; 5000], 250.0, 500.0).unwrap().len(), 9999);
    }

    #[test]
    fn sinusoid_spectrum_preserved() {
        let fs_in = 100.0;
        let fs_out = 500.0;
        let n = 1001; // 10 s inclusive
        let x: Vec<f64> = (0..n).map(|k| (2.0 * PI * 2.0 * k as f64 / fs_in).sin()).collect();
        let y = resample_linear(&x, fs_in, fs_out).unwrap();
        // amplitude error against the analytic sinusoid
        let err = y
            .iter()
            .enumerate()
            .map(|(k, v)| (v - (2.0 * PI * 2.0 * k as f64 / fs_out).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.01, "max error {err}");
        // dominant DFT bin over the first 5000 samples (0.1 Hz resolution)
        let m = 5000;
        let mut best = (0usize, 0.0f64);
        for bin in 1..200 {
            let (mut re, mut im) = (0.0, 0.0);
            for (k, v) in y[..m].iter().enumerate() {
                let w = 2.0 * PI * bin as f64 * k as f64 / m as f64;
                re += v * w.cos();
                im -= v * w.sin();
            }
            let mag = re.hypot(im);
            if mag > best.1 {
                best = (bin, mag);
            }
        }
        assert_eq!(best.0 as f64 * fs_out / m as f64, 2.0);
    }
}
