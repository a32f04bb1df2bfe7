//! Training configuration and its `key = value` file format.
//!
//! Blank lines and lines starting with `#` are ignored. Keys:
//!
//! | key | meaning |
//! |---|---|
//! | `model` | `toy` or `full` architecture preset |
//! | `learning_rate` | Adam step size |
//! | `batch_size` | anchors per iteration |
//! | `iterations` | optimizer steps |
//! | `window` | training crop length in frames |
//! | `diffusion_steps` | M, overrides the preset |
//! | `seed` | initialization and sampling seed |
//! | `lambda_pos`, `lambda_vel`, `lambda_foot`, `lambda_nce` | loss weights |
//! | `negatives` | K mixed groups per anchor |
//! | `replace_prob` | per-dancer swap probability for negatives |
//! | `clip_norm` | global gradient norm ceiling, `0` disables |
//! | `checkpoint_every` | iterations between checkpoints, `0` only at the end |
//! | `use_geo`, `use_nce`, `use_group_attention` | ablation switches |
//! | `dtype` | `f32` or `f64` |

use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use super::losses::LossWeights;
use crate::error::{Error, Result};
use crate::nn::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub window: usize,
    pub diffusion_steps: Option<usize>,
    pub seed: u64,
    pub weights: LossWeights,
    pub negatives: usize,
    pub replace_prob: f64,
    pub clip_norm: f64,
    pub checkpoint_every: usize,
    pub use_geo: bool,
    pub use_nce: bool,
    pub use_group_attention: bool,
    pub dtype: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: "toy".into(),
            learning_rate: 1e-4,
            batch_size: 64,
            iterations: 2000,
            window: 150,
            diffusion_steps: None,
            seed: 0,
            weights: LossWeights::default(),
            negatives: 10,
            replace_prob: 0.5,
            clip_norm: 1.0,
            checkpoint_every: 0,
            use_geo: true,
            use_nce: true,
            use_group_attention: true,
            dtype: "f32".into(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("cannot parse {key} = {value:?}")))
}

impl TrainConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "model" => self.model = value.to_string(),
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "diffusion_steps" => self.diffusion_steps = Some(parse(key, value)?),
            "seed" => self.seed = parse(key, value)?,
            "lambda_pos" => self.weights.lambda_pos = parse(key, value)?,
            "lambda_vel" => self.weights.lambda_vel = parse(key, value)?,
            "lambda_foot" => self.weights.lambda_foot = parse(key, value)?,
            "lambda_nce" => self.weights.lambda_nce = parse(key, value)?,
            "negatives" => self.negatives = parse(key, value)?,
            "replace_prob" => self.replace_prob = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "use_geo" => self.use_geo = parse(key, value)?,
            "use_nce" => self.use_nce = parse(key, value)?,
            "use_group_attention" => self.use_group_attention = parse(key, value)?,
            "dtype" => self.dtype = value.to_string(),
            other => return Err(Error::InvalidArgument(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn parse_str(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = TrainConfig::default();
        cfg.parse_str(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 || self.window < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch_size {} and window {} must be positive (window ≥ 2)",
                self.batch_size, self.window
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning_rate {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.replace_prob) || self.replace_prob == 0.0 {
            return Err(Error::InvalidArgument(format!("replace_prob {} must lie in (0, 1]", self.replace_prob)));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::InvalidArgument(format!("clip_norm {}", self.clip_norm)));
        }
        if self.nce_active() && self.batch_size < 2 {
            return Err(Error::InsufficientDonors);
        }
        self.dtype()?;
        self.model_config()?.validate()
    }

    pub fn nce_active(&self) -> bool {
        self.use_nce && self.negatives > 0 && self.weights.lambda_nce > 0.0
    }

    pub fn dtype(&self) -> Result<DType> {
        match self.dtype.as_str() {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(Error::InvalidArgument(format!("dtype {other:?}, expected f32 or f64"))),
        }
    }

    /// The architecture preset with this run's overrides applied.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::by_name(&self.model)?;
        if let Some(m) = self.diffusion_steps {
            cfg.diffusion_steps = m;
        }
        cfg.use_group_attention = self.use_group_attention;
        Ok(cfg)
    }
}
