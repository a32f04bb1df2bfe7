use candle_core::{DType, Device, Tensor};
use ndarray::Array2;

use super::config::ModelConfig;
use super::denoiser::Denoiser;
use super::params::ParamStore;
use crate::contrastive::ContrastiveEncoder;
use crate::diffusion::X0Predictor;
use crate::error::Result;

/// Denoiser plus contrastive encoder, sharing one parameter store.
#[derive(Clone)]
pub struct GcdModel {
    pub config: ModelConfig,
    pub denoiser: Denoiser,
    pub encoder: ContrastiveEncoder,
}

impl GcdModel {
    /// Creates any missing parameters from `seed` and returns a model whose
    /// tensors are the store's trainable variables.
    pub fn init(store: &mut ParamStore, config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut b = store.builder(seed);
        Ok(GcdModel {
            config: config.clone(),
            denoiser: Denoiser::new(&mut b, config)?,
            encoder: ContrastiveEncoder::new(&mut b, config)?,
        })
    }

    /// Inference view: every parameter must already exist; tensors are
    /// detached from the store's variables.
    pub fn frozen(store: &mut ParamStore, config: &ModelConfig) -> Result<Self> {
        let mut b = store.frozen_builder();
        Ok(GcdModel {
            config: config.clone(),
            denoiser: Denoiser::new(&mut b, config)?,
            encoder: ContrastiveEncoder::new(&mut b, config)?,
        })
    }
}

/// (1, T, D_a) tensor from host features.
pub fn audio_tensor(features: &Array2<f64>, dtype: DType, device: &Device) -> Result<Tensor> {
    let (t, d) = features.dim();
    let flat: Vec<f64> = features.iter().copied().collect();
    Ok(Tensor::from_vec(flat, (1, t, d), device)?.to_dtype(dtype)?)
}

/// The denoiser with its music tokens and group embedding fixed, as seen by
/// the reverse chain.
pub struct ConditionedDenoiser<'a> {
    pub denoiser: &'a Denoiser,
    pub tokens: Tensor,
    pub w: Tensor,
}

impl X0Predictor for ConditionedDenoiser<'_> {
    fn predict_x0(&self, x_m: &Tensor, m: usize) -> Result<Tensor> {
        let b = x_m.dim(0)?;
        self.denoiser.forward(x_m, &vec![m; b], &self.tokens, &self.w)
    }
}
