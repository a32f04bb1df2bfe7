use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::POSE_DIM;
use crate::synth::DEFAULT_AUDIO_DIM;

pub const MAPPING_LAYERS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_size: usize,
    pub music_encoder_layers: usize,
    pub n_max: usize,
    pub audio_dim: usize,
    pub pose_dim: usize,
    pub diffusion_steps: usize,
    pub mapping_hidden: usize,
    /// Ablation switch for the whole Group Global Attention block.
    pub use_group_attention: bool,
}

impl ModelConfig {
    pub fn toy() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            ff_size: 128,
            music_encoder_layers: 1,
            n_max: 5,
            audio_dim: DEFAULT_AUDIO_DIM,
            pose_dim: POSE_DIM,
            diffusion_steps: 100,
            mapping_hidden: 64,
            use_group_attention: true,
        }
    }

    pub fn full() -> Self {
        ModelConfig {
            d_model: 512,
            n_heads: 8,
            n_layers: 5,
            ff_size: 1024,
            music_encoder_layers: 2,
            n_max: 5,
            audio_dim: DEFAULT_AUDIO_DIM,
            pose_dim: POSE_DIM,
            diffusion_steps: 1000,
            mapping_hidden: 512,
            use_group_attention: true,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "full" => Ok(Self::full()),
            other => Err(Error::UnknownStrategy {
                kind: "model config",
                name: other.to_string(),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::InvalidArgument("d_model must be even".into()));
        }
        if self.n_max == 0 {
            return Err(Error::InvalidArgument("n_max must be at least 1".into()));
        }
        if self.pose_dim != POSE_DIM {
            return Err(Error::InvalidArgument(format!("pose_dim must be {POSE_DIM}")));
        }
        if self.diffusion_steps == 0 {
            return Err(Error::BadSteps(0));
        }
        if self.n_layers == 0 || self.ff_size == 0 || self.mapping_hidden == 0 || self.audio_dim == 0 {
            return Err(Error::InvalidArgument("layer counts and widths must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::toy().validate().unwrap();
        ModelConfig::full().validate().unwrap();
        assert_eq!(ModelConfig::full().d_model, 512);
        let mut bad = ModelConfig::toy();
        bad.n_heads = 3;
        assert!(bad.validate().is_err());
        assert!(ModelConfig::by_name("huge").is_err());
    }
}
