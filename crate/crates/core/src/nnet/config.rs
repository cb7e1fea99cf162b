use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub depth: usize,
    pub width: usize,
    pub stride: usize,
    pub kernel: usize,
}

impl StageSpec {
    pub const fn new(depth: usize, width: usize, stride: usize, kernel: usize) -> Self {
        Self { depth, width, stride, kernel }
    }
}

/// Staged bottleneck 1D CNN: stem, residual stages, global average pool
/// and a dense head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub n_classes: usize,
    pub stem: StemSpec,
    pub stages: Vec<StageSpec>,
    #[serde(default = "default_se_ratio")]
    pub se_ratio: f64,
    pub group_width: usize,
    #[serde(default = "default_true")]
    pub temperature_enabled: bool,
}

fn default_se_ratio() -> f64 {
    0.25
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.n_classes == 0 {
            return Err(invalid("in_channels and n_classes must be >= 1"));
        }
        if self.group_width == 0 {
            return Err(invalid("group_width must be >= 1"));
        }
        if !(self.se_ratio > 0.0 && self.se_ratio <= 1.0) {
            return Err(invalid(format!("se_ratio {} outside (0, 1]", self.se_ratio)));
        }
        let s = &self.stem;
        if s.out_channels == 0 || s.kernel % 2 == 0 || !(s.stride == 1 || s.stride == 2) {
            return Err(invalid(format!("bad stem {s:?}: kernel must be odd and stride 1 or 2")));
        }
        if self.stages.is_empty() {
            return Err(invalid("at least one stage required"));
        }
        for (i, st) in self.stages.iter().enumerate() {
            if st.depth == 0 {
                return Err(invalid(format!("stage {i}: depth must be >= 1")));
            }
            if st.width < self.group_width || st.width % self.group_width != 0 {
                return Err(invalid(format!(
                    "stage {i}: width {} not a multiple of group_width {}",
                    st.width, self.group_width
                )));
            }
            if st.kernel % 2 == 0 {
                return Err(invalid(format!("stage {i}: kernel {} must be odd", st.kernel)));
            }
            if !(st.stride == 1 || st.stride == 2) {
                return Err(invalid(format!("stage {i}: stride {} must be 1 or 2", st.stride)));
            }
        }
        Ok(())
    }

    pub fn se_units(&self, width: usize) -> usize {
        ((self.se_ratio * width as f64).round() as usize).max(1)
    }

    pub fn feature_channels(&self) -> usize {
        self.stages.last().map_or(self.stem.out_channels, |s| s.width)
    }

    pub fn total_stride(&self) -> usize {
        self.stages.iter().map(|s| s.stride).product::<usize>() * self.stem.stride
    }

    /// Length of the feature map entering the global pool.
    pub fn pooled_length(&self, input_len: usize) -> usize {
        let mut l = input_len.div_ceil(self.stem.stride);
        for s in &self.stages {
            l = l.div_ceil(s.stride);
        }
        l
    }

    /// Two small stages of width 8, for gradient checks.
    pub fn tiny(in_channels: usize, n_classes: usize) -> Self {
        Self {
            in_channels,
            n_classes,
            stem: StemSpec { out_channels: 8, kernel: 5, stride: 2 },
            stages: vec![StageSpec::new(1, 8, 1, 3), StageSpec::new(2, 8, 2, 3)],
            se_ratio: 0.25,
            group_width: 4,
            temperature_enabled: true,
        }
    }

    /// Three single-block stages; used by the ablation studies.
    pub fn micro(in_channels: usize, n_classes: usize) -> Self {
        Self {
            in_channels,
            n_classes,
            stem: StemSpec { out_channels: 16, kernel: 7, stride: 2 },
            stages: vec![StageSpec::new(1, 16, 2, 5), StageSpec::new(1, 32, 2, 5), StageSpec::new(1, 64, 2, 3)],
            se_ratio: 0.25,
            group_width: 8,
            temperature_enabled: true,
        }
    }

    /// Four stages 32/64/128/256 with depths 2/2/3/4, total stride 32.
    pub fn desk(in_channels: usize, n_classes: usize) -> Self {
        Self {
            in_channels,
            n_classes,
            stem: StemSpec { out_channels: 32, kernel: 15, stride: 2 },
            stages: vec![
                StageSpec::new(2, 32, 2, 3),
                StageSpec::new(2, 64, 2, 3),
                StageSpec::new(3, 128, 2, 3),
                StageSpec::new(4, 256, 2, 3),
            ],
            se_ratio: 0.25,
            group_width: 16,
            temperature_enabled: true,
        }
    }

    /// Larger presets approximating the 11.7M / 25.6M / 76.3M parameter
    /// scale points (12-lead input, 150 labels).
    pub fn scaled(in_channels: usize, n_classes: usize, size: ScalePreset) -> Self {
        let (stem, widths, depths, gw) = match size {
            ScalePreset::Small => (64, [64, 160, 384, 832], [2, 3, 11, 4], 16),
            ScalePreset::Base => (64, [96, 224, 576, 1216], [2, 4, 11, 4], 32),
            ScalePreset::Large => (64, [128, 384, 960, 2048], [2, 5, 8, 5], 64),
        };
        Self {
            in_channels,
            n_classes,
            stem: StemSpec { out_channels: stem, kernel: 15, stride: 2 },
            stages: widths.iter().zip(depths).map(|(&w, d)| StageSpec::new(d, w, 2, 3)).collect(),
            se_ratio: 0.25,
            group_width: gw,
            temperature_enabled: true,
        }
    }

    pub fn preset(name: &str, in_channels: usize, n_classes: usize) -> Result<Self> {
        Ok(match name {
            "tiny" => Self::tiny(in_channels, n_classes),
            "micro" => Self::micro(in_channels, n_classes),
            "desk" => Self::desk(in_channels, n_classes),
            "small" => Self::scaled(in_channels, n_classes, ScalePreset::Small),
            "base" => Self::scaled(in_channels, n_classes, ScalePreset::Base),
            "large" => Self::scaled(in_channels, n_classes, ScalePreset::Large),
            other => return Err(invalid(format!("unknown model preset {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalePreset {
    Small,
    Base,
    Large,
}
