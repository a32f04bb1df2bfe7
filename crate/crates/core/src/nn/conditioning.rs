//! Music encoder, diffusion-timestep embedding, group embedding `w` and the
//! Group Modulation layer.

use candle_core::{DType, Device, Tensor, D};

use super::attention::{AttentionMask, MultiHeadAttention};
use super::config::{ModelConfig, MAPPING_LAYERS};
use super::layers::{positional_table, sinusoid, FeedForward, LayerNorm, Linear, Mlp};
use super::params::{Builder, Init};
use crate::error::{Error, Result};

pub const MODULATION_EPS: f64 = 1e-5;

/// Post-norm transformer encoder layer without masking.
#[derive(Clone)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff: FeedForward,
    pub ln2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(b: &mut Builder<'_>, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        b.scope(name, |b| {
            Ok(EncoderLayer {
                attn: MultiHeadAttention::new(b, "attn", d, cfg.n_heads)?,
                ln1: LayerNorm::new(b, "ln1", d)?,
                ff: FeedForward::new(b, "ff", d, cfg.ff_size)?,
                ln2: LayerNorm::new(b, "ln2", d)?,
            })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, t, _) = x.dims3()?;
        let h = self.ln1.forward(&(x + self.attn.self_attend(x, &AttentionMask::global(1, t))?)?)?;
        self.ln2.forward(&(&h + self.ff.forward(&h)?)?)
    }
}

#[derive(Clone)]
pub struct MusicEncoder {
    pub input: Linear,
    pub layers: Vec<EncoderLayer>,
    pub output: Linear,
    audio_dim: usize,
}

impl MusicEncoder {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Result<Self> {
        b.scope("music", |b| {
            Ok(MusicEncoder {
                input: Linear::new(b, "input", cfg.audio_dim, cfg.d_model)?,
                layers: (0..cfg.music_encoder_layers)
                    .map(|i| EncoderLayer::new(b, &format!("layer{i}"), cfg))
                    .collect::<Result<_>>()?,
                output: Linear::new(b, "output", cfg.d_model, cfg.d_model)?,
                audio_dim: cfg.audio_dim,
            })
        })
    }

    /// (B, T, D_a) features → (B, T, d) tokens.
    pub fn forward(&self, audio: &Tensor) -> Result<Tensor> {
        let (_, t, da) = audio.dims3()?;
        if da != self.audio_dim {
            return Err(Error::ShapeMismatch(format!(
                "audio features have {da} channels, model expects {}",
                self.audio_dim
            )));
        }
        let mut h = self.input.forward(audio)?;
        let d = h.dim(2)?;
        h = h.broadcast_add(&positional_table(t, d, h.dtype(), h.device())?)?;
        for l in &self.layers {
            h = l.forward(&h)?;
        }
        self.output.forward(&h)
    }
}

/// Sinusoidal code of the step index followed by an MLP with three hidden
/// layers.
#[derive(Clone)]
pub struct TimestepEmbedder {
    pub mlp: Mlp,
    d: usize,
    max_step: usize,
}

impl TimestepEmbedder {
    pub fn new(b: &mut Builder<'_>, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(TimestepEmbedder {
            mlp: Mlp::new(b, name, &[d, d, d, d, d])?,
            d,
            max_step: cfg.diffusion_steps,
        })
    }

    pub fn pre_embedding(&self, steps: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
        if let Some(&m) = steps.iter().find(|&&m| m > self.max_step) {
            return Err(Error::BadStep {
                m,
                lo: 0,
                hi: self.max_step,
            });
        }
        let flat: Vec<f64> = steps.iter().flat_map(|&m| sinusoid(m as f64, self.d)).collect();
        Ok(Tensor::from_vec(flat, (steps.len(), self.d), device)?.to_dtype(dtype)?)
    }

    /// One (B, d) row per entry of `steps`.
    pub fn forward(&self, steps: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
        self.mlp.forward(&self.pre_embedding(steps, dtype, device)?)
    }
}

/// `w = MLP(z + c̄) + E[n − 1]` with `c̄` the temporal mean of the music tokens.
pub fn group_embedding_with<F>(mlp: F, table: &Tensor, tokens: &Tensor, n_dancers: usize, z: &Tensor) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let n_max = table.dim(0)?;
    if n_dancers == 0 || n_dancers > n_max {
        return Err(Error::TooManyDancers {
            got: n_dancers,
            max: n_max,
        });
    }
    let c_bar = tokens.mean(1)?;
    if z.dims() != c_bar.dims() {
        return Err(Error::ShapeMismatch(format!(
            "z {:?} vs pooled music {:?}",
            z.dims(),
            c_bar.dims()
        )));
    }
    let e_n = table.narrow(0, n_dancers - 1, 1)?;
    Ok(mlp(&(z + c_bar)?)?.broadcast_add(&e_n)?)
}

#[derive(Clone)]
pub struct GroupEmbedder {
    pub mapping: Mlp,
    pub count_table: Tensor,
}

impl GroupEmbedder {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Result<Self> {
        let (d, h) = (cfg.d_model, cfg.mapping_hidden);
        let mut widths = vec![d];
        widths.extend(std::iter::repeat_n(h, MAPPING_LAYERS - 1));
        widths.push(d);
        b.scope("group", |b| {
            Ok(GroupEmbedder {
                mapping: Mlp::new(b, "mapping", &widths)?,
                count_table: b.get("count_table", &[cfg.n_max, d], Init::Normal(0.02))?,
            })
        })
    }

    pub fn forward(&self, tokens: &Tensor, n_dancers: usize, z: &Tensor) -> Result<Tensor> {
        group_embedding_with(|x| self.mapping.forward(x), &self.count_table, tokens, n_dancers, z)
    }
}

/// Channel standardization over all N·T tokens of a batch row followed by the
/// affine map `S(w)·ĥ + b(w)`.
pub fn modulate_with(h: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
    let mean = h.mean_keepdim(1)?;
    let hc = h.broadcast_sub(&mean)?;
    let var = hc.sqr()?.mean_keepdim(1)?;
    let hn = hc.broadcast_div(&(var + MODULATION_EPS)?.sqrt()?)?;
    Ok(hn.broadcast_mul(&scale.unsqueeze(1)?)?.broadcast_add(&shift.unsqueeze(1)?)?)
}

#[derive(Clone)]
pub struct GroupModulation {
    pub scale: Linear,
    pub shift: Linear,
}

impl GroupModulation {
    pub fn new(b: &mut Builder<'_>, name: &str, d: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(GroupModulation {
                scale: Linear::with_bias_init(b, "scale", d, d, Init::Const(1.0))?,
                shift: Linear::new(b, "shift", d, d)?,
            })
        })
    }

    /// `h`: (B, S, d), `w`: (B, d).
    pub fn forward(&self, h: &Tensor, w: &Tensor) -> Result<Tensor> {
        modulate_with(h, &self.scale.forward(w)?, &self.shift.forward(w)?)
    }
}

pub fn mean_over_tokens(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus2)?)
}
