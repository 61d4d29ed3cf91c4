use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Synthesis resolutions `4, 8, …, R`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSet(Vec<usize>);

impl ScaleSet {
    pub fn for_resolution(resolution: usize) -> Result<Self> {
        if resolution < 4 || !resolution.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "resolution must be a power of two >= 4, got {resolution}"
            )));
        }
        let mut scales = Vec::new();
        let mut r = 4;
        while r <= resolution {
            scales.push(r);
            r *= 2;
        }
        Ok(Self(scales))
    }

    pub fn scales(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn resolution(&self) -> usize {
        *self.0.last().expect("scale set is never empty")
    }

    /// Position of `scale` in the set.
    pub fn index_of(&self, scale: usize) -> Option<usize> {
        self.0.iter().position(|&s| s == scale)
    }
}

/// Variant switches for the ablation studies. All false is the full model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Feed `te_i ⊕ z` to the synthesis network without a mapping network.
    pub disable_mapping: bool,
    /// One label embedding shared by every scale.
    pub disable_sle: bool,
    /// Shared label embedding concatenated to `z` ahead of the mapping network.
    pub sle_before_mapping: bool,
    /// Drop the classification regularizer (forces `λ_clf = 0`).
    pub disable_cr: bool,
    /// Drop the unconditional discriminator branch (forces `λ_uncond = 0`).
    pub disable_uncond: bool,
}

impl AblationFlags {
    pub fn validate(&self) -> Result<()> {
        if self.sle_before_mapping && self.disable_mapping {
            return Err(Error::IncompatibleFlags(
                "sle_before_mapping needs a mapping network, but disable_mapping is set".into(),
            ));
        }
        Ok(())
    }

    /// Whether every scale receives the same embedding.
    pub fn shared_embedding(&self) -> bool {
        self.disable_sle || self.sle_before_mapping
    }
}

/// Architecture shared by the label encoder, generator and discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub resolution: usize,
    /// Number of ingredient labels `C`.
    pub num_labels: usize,
    /// Style noise / intermediate latent length `L`.
    pub z_dim: usize,
    /// Label embedding length `T`.
    pub embed_dim: usize,
    pub mapping_layers: usize,
    pub mapping_lr_mul: f64,
    /// Fully connected layers per label sub-encoder.
    pub sle_depth: usize,
    /// Channels at scale `r` are `min(channel_base / r, channel_max)`.
    pub channel_base: usize,
    pub channel_max: usize,
    pub mbstd_group: usize,
    /// Per-layer detail noise in the synthesis network.
    pub use_noise: bool,
    pub ablation: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            resolution: 256,
            num_labels: 10,
            z_dim: 256,
            embed_dim: 256,
            mapping_layers: 8,
            mapping_lr_mul: 0.01,
            sle_depth: 1,
            channel_base: 16384,
            channel_max: 512,
            mbstd_group: 4,
            use_noise: false,
            ablation: AblationFlags::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        ScaleSet::for_resolution(self.resolution)?;
        let positive = [
            ("num_labels", self.num_labels),
            ("z_dim", self.z_dim),
            ("embed_dim", self.embed_dim),
            ("sle_depth", self.sle_depth),
            ("channel_base", self.channel_base),
            ("channel_max", self.channel_max),
            ("mbstd_group", self.mbstd_group),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !self.ablation.disable_mapping && self.mapping_layers == 0 {
            return Err(Error::InvalidConfig("mapping_layers must be positive".into()));
        }
        if !(self.mapping_lr_mul > 0.0) {
            return Err(Error::InvalidConfig("mapping_lr_mul must be positive".into()));
        }
        self.ablation.validate()
    }

    pub fn scales(&self) -> ScaleSet {
        ScaleSet::for_resolution(self.resolution).expect("validated resolution")
    }

    pub fn channels(&self, scale: usize) -> usize {
        (self.channel_base / scale).clamp(1, self.channel_max)
    }

    /// Length of the conditioning vector fed to every synthesis affine.
    pub fn synthesis_cond_dim(&self) -> usize {
        if self.ablation.sle_before_mapping {
            self.z_dim
        } else {
            self.embed_dim + self.z_dim
        }
    }

    /// Input width of the mapping network.
    pub fn mapping_in_dim(&self) -> usize {
        if self.ablation.sle_before_mapping {
            self.embed_dim + self.z_dim
        } else {
            self.z_dim
        }
    }

    /// Small network for tests and CPU runs.
    pub fn tiny(resolution: usize, num_labels: usize) -> Self {
        Self {
            resolution,
            num_labels,
            z_dim: 8,
            embed_dim: 8,
            mapping_layers: 2,
            mapping_lr_mul: 0.01,
            sle_depth: 1,
            channel_base: 16,
            channel_max: 4,
            mbstd_group: 4,
            use_noise: false,
            ablation: AblationFlags::default(),
        }
    }
}
