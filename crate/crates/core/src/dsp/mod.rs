//! Preprocessing chain: resampling, biquad filtering, windowing and
//! per-segment normalization.

mod biquad;
mod pipeline;
mod resample;
mod window;

pub use biquad::{apply_iir, design_biquad, BiquadCoeffs, FilterKind};
pub use pipeline::{filter_chain, preprocess, preprocess_raw, PreprocessConfig, Segment};
pub use resample::resample_linear;
pub use window::{segment_windows, window_len, zscore, zscore_in_place, ZSCORE_MIN_STD};
