//! 1D convolutional network: tensor kernels, the staged residual model,
//! its forward and reverse-mode passes and parameter counting.

mod config;
mod model;
pub mod ops;
mod params;
mod real;
mod tensor;

pub use config::{ModelConfig, ScalePreset, StageSpec, StemSpec};
pub use model::{
    backward, build_model, conv_param_count, count_params, dense_param_count, forward, forward_features, head_backward,
    head_logits, init_norm_stats, predict, Cache, Mode, NormStats,
};
pub use ops::{conv1d, squeeze_excite};
pub use params::{Param, ParamStore};
pub use real::{Precision, Real};
pub use tensor::{Matrix, Tensor3};
