//! Contrastive encoder `g(x, w, m)`; the density ratio is `f = exp(g)`.
//!
//! Same local/global attention stack as the denoiser but with no music
//! input. The step embedding rides along as one extra token that only the
//! global blocks see. Tokens are mean-pooled into a single output unit.

use candle_core::{Tensor, Var};

use crate::diffusion::GuidanceScore;
use crate::error::{Error, Result};
use crate::nn::attention::{AttentionMask, MultiHeadAttention};
use crate::nn::conditioning::{GroupModulation, TimestepEmbedder};
use crate::nn::config::ModelConfig;
use crate::nn::layers::{positional_table, FeedForward, LayerNorm, Linear};
use crate::nn::params::Builder;

#[derive(Clone)]
pub struct EncoderBlock {
    pub local: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff1: FeedForward,
    pub ln2: LayerNorm,
    pub global: MultiHeadAttention,
    pub ln3: LayerNorm,
    pub modulation: GroupModulation,
    pub ff2: FeedForward,
    pub ln4: LayerNorm,
}

impl EncoderBlock {
    fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(EncoderBlock {
            local: MultiHeadAttention::new(b, "local", d, cfg.n_heads)?,
            ln1: LayerNorm::new(b, "ln1", d)?,
            ff1: FeedForward::new(b, "ff1", d, cfg.ff_size)?,
            ln2: LayerNorm::new(b, "ln2", d)?,
            global: MultiHeadAttention::new(b, "global", d, cfg.n_heads)?,
            ln3: LayerNorm::new(b, "ln3", d)?,
            modulation: GroupModulation::new(b, "modulation", d)?,
            ff2: FeedForward::new(b, "ff2", d, cfg.ff_size)?,
            ln4: LayerNorm::new(b, "ln4", d)?,
        })
    }

    /// `motion`: (B, N·T, d), `tau`: (B, 1, d).
    fn forward(&self, motion: &Tensor, tau: &Tensor, w: &Tensor, n: usize, t: usize) -> Result<(Tensor, Tensor)> {
        let h = self.ln1.forward(&(motion + self.local.self_attend(motion, &AttentionMask::local(n, t))?)?)?;
        let h = self.ln2.forward(&(&h + self.ff1.forward(&h)?)?)?;
        let all = Tensor::cat(&[&h, tau], 1)?;
        let g = self.ln3.forward(&(&all + self.global.self_attend(&all, &AttentionMask::global(1, n * t + 1))?)?)?;
        let g = self.modulation.forward(&g, w)?;
        let g = self.ln4.forward(&(&g + self.ff2.forward(&g)?)?)?;
        Ok((g.narrow(1, 0, n * t)?, g.narrow(1, n * t, 1)?))
    }
}

#[derive(Clone)]
pub struct ContrastiveEncoder {
    pub config: ModelConfig,
    pub input: Linear,
    pub timestep: TimestepEmbedder,
    pub blocks: Vec<EncoderBlock>,
    pub head: Linear,
}

impl ContrastiveEncoder {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        b.scope("contrastive", |b| {
            Ok(ContrastiveEncoder {
                config: cfg.clone(),
                input: Linear::new(b, "input", cfg.pose_dim, cfg.d_model)?,
                timestep: TimestepEmbedder::new(b, "timestep", cfg)?,
                blocks: (0..cfg.n_layers)
                    .map(|i| b.scope(&format!("block{i}"), |b| EncoderBlock::new(b, cfg)))
                    .collect::<Result<_>>()?,
                head: Linear::new(b, "head", cfg.d_model, 1)?,
            })
        })
    }

    /// Raw scores `g` for a batch: `x` (B, N, T, 147), `w` (B, d), one step
    /// per row. Returns shape (B,).
    pub fn score(&self, x: &Tensor, w: &Tensor, steps: &[usize]) -> Result<Tensor> {
        let (b, n, t, p) = x.dims4()?;
        let d = self.config.d_model;
        if p != self.config.pose_dim {
            return Err(Error::ShapeMismatch(format!("pose width {p}, expected {}", self.config.pose_dim)));
        }
        if w.dims() != [b, d] || steps.len() != b {
            return Err(Error::ShapeMismatch(format!(
                "batch {b}: group embedding {:?}, {} steps",
                w.dims(),
                steps.len()
            )));
        }
        let pe = positional_table(t, d, x.dtype(), x.device())?;
        let mut motion = self.input.forward(x)?.broadcast_add(&pe)?.reshape((b, n * t, d))?;
        let mut tau = self.timestep.forward(steps, x.dtype(), x.device())?.unsqueeze(1)?;
        for block in &self.blocks {
            (motion, tau) = block.forward(&motion, &tau, w, n, t)?;
        }
        let pooled = Tensor::cat(&[&motion, &tau], 1)?.mean(1)?;
        Ok(self.head.forward(&pooled)?.squeeze(1)?)
    }

    /// `∇_x g(x, w, m)` for every row of the batch.
    pub fn gradient(&self, x: &Tensor, w: &Tensor, steps: &[usize]) -> Result<Tensor> {
        let xv = Var::from_tensor(&x.detach())?;
        let g = self.score(xv.as_tensor(), &w.detach(), steps)?.sum_all()?;
        let grads = g.backward()?;
        match grads.get(xv.as_tensor()) {
            Some(gx) => Ok(gx.clone()),
            None => Ok(x.zeros_like()?),
        }
    }
}

/// Guidance source: the encoder with the group embedding of the sample
/// being generated.
pub struct EncoderGuide<'a> {
    pub encoder: &'a ContrastiveEncoder,
    pub w: Tensor,
}

impl GuidanceScore for EncoderGuide<'_> {
    fn score_gradient(&self, x_m: &Tensor, m: usize) -> Result<Tensor> {
        let b = x_m.dim(0)?;
        let w = if self.w.dim(0)? == b {
            self.w.clone()
        } else {
            self.w.broadcast_as((b, self.w.dim(1)?))?.contiguous()?
        };
        self.encoder.gradient(x_m, &w, &vec![m; b])
    }
}
