//! ECG foundation-model pipeline at desk scale.
//!
//! The crate is organised the way data flows through it:
//!
//! - [`recordio`]: record/label data model, the ECGB container, report
//!   parsing, patient-level splits and a synthetic dipole ECG generator.
//! - [`dsp`]: resampling, biquad filters, windowing and z-scoring.
//! - [`hexaxial`]: frontal-plane lead geometry and single-lead augmentation.
//! - [`nnet`]: tensors, kernels and the staged bottleneck 1D CNN with a
//!   hand-written backward pass.
//! - [`puloss`]: positive-unlabeled multi-label loss and BCE/focal baselines.
//! - [`trainer`]: AdamW, learning-rate schedules, training, fine-tuning and
//!   checkpoints.
//! - [`metrics`]: AUROC/AUPRC, confusion metrics, regression metrics and
//!   bootstrap confidence intervals.
//! - [`experiments`]: label corruption and the ablation studies.

pub mod dsp;
pub mod error;
pub mod experiments;
pub mod hexaxial;
pub mod metrics;
pub mod nnet;
pub mod puloss;
pub mod recordio;
pub mod trainer;

pub use error::{Error, Result};
