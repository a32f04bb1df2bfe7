//! The group denoising network: predicts clean motion x₀ from a noisy group
//! sample, the diffusion step, the music and the group embedding.

use candle_core::{Tensor, D};

use super::attention::{AttentionMask, MultiHeadAttention};
use super::conditioning::{GroupEmbedder, GroupModulation, MusicEncoder, TimestepEmbedder};
use super::config::ModelConfig;
use super::layers::{positional_table, FeedForward, LayerNorm, Linear};
use super::params::Builder;
use crate::error::{Error, Result};

/// Local self-attention, music cross-attention with FiLM, feed-forward.
#[derive(Clone)]
pub struct MusicMotionBlock {
    pub local: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub cross: MultiHeadAttention,
    pub film: Linear,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
    pub ln3: LayerNorm,
}

impl MusicMotionBlock {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(MusicMotionBlock {
            local: MultiHeadAttention::new(b, "local", d, cfg.n_heads)?,
            ln1: LayerNorm::new(b, "ln1", d)?,
            cross: MultiHeadAttention::new(b, "cross", d, cfg.n_heads)?,
            film: Linear::new(b, "film", d, 2 * d)?,
            ln2: LayerNorm::new(b, "ln2", d)?,
            ff: FeedForward::new(b, "ff", d, cfg.ff_size)?,
            ln3: LayerNorm::new(b, "ln3", d)?,
        })
    }

    pub fn cross_attend(&self, x: &Tensor, context: &Tensor) -> Result<Tensor> {
        let a = self.cross.forward(x, context, None)?;
        let (_, _, d) = x.dims3()?;
        let film = self.film.forward(&context.mean(1)?)?.unsqueeze(1)?;
        let gamma = film.narrow(D::Minus1, 0, d)?;
        let beta = film.narrow(D::Minus1, d, d)?;
        let a = a.broadcast_mul(&(gamma + 1.0)?)?.broadcast_add(&beta)?;
        self.ln2.forward(&(x + a)?)
    }

    pub fn forward(&self, x: &Tensor, context: &Tensor, mask: &AttentionMask) -> Result<Tensor> {
        let h1 = self.ln1.forward(&(x + self.local.self_attend(x, mask)?)?)?;
        let h2 = self.cross_attend(&h1, context)?;
        self.ln3.forward(&(&h2 + self.ff.forward(&h2)?)?)
    }
}

/// Global self-attention over all dancers, Group Modulation by `w`,
/// feed-forward.
#[derive(Clone)]
pub struct GroupGlobalBlock {
    pub global: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub modulation: GroupModulation,
    pub ff: FeedForward,
    pub ln2: LayerNorm,
}

impl GroupGlobalBlock {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(GroupGlobalBlock {
            global: MultiHeadAttention::new(b, "global", d, cfg.n_heads)?,
            ln1: LayerNorm::new(b, "ln1", d)?,
            modulation: GroupModulation::new(b, "modulation", d)?,
            ff: FeedForward::new(b, "ff", d, cfg.ff_size)?,
            ln2: LayerNorm::new(b, "ln2", d)?,
        })
    }

    pub fn forward(&self, x: &Tensor, w: &Tensor, mask: &AttentionMask) -> Result<Tensor> {
        let g = self.ln1.forward(&(x + self.global.self_attend(x, mask)?)?)?;
        let g = self.modulation.forward(&g, w)?;
        self.ln2.forward(&(&g + self.ff.forward(&g)?)?)
    }
}

#[derive(Clone)]
pub struct Denoiser {
    pub config: ModelConfig,
    pub input: Linear,
    pub music: MusicEncoder,
    pub timestep: TimestepEmbedder,
    pub group: GroupEmbedder,
    pub motion_blocks: Vec<MusicMotionBlock>,
    pub group_blocks: Vec<GroupGlobalBlock>,
    pub output: Linear,
}

impl Denoiser {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        b.scope("denoiser", |b| {
            let input = Linear::new(b, "input", cfg.pose_dim, d)?;
            let music = MusicEncoder::new(b, cfg)?;
            let timestep = TimestepEmbedder::new(b, "timestep", cfg)?;
            let group = GroupEmbedder::new(b, cfg)?;
            let mut motion_blocks = Vec::new();
            let mut group_blocks = Vec::new();
            for i in 0..cfg.n_layers {
                b.scope(&format!("block{i}"), |b| {
                    motion_blocks.push(b.scope("motion", |b| MusicMotionBlock::new(b, cfg))?);
                    if cfg.use_group_attention {
                        group_blocks.push(b.scope("group", |b| GroupGlobalBlock::new(b, cfg))?);
                    }
                    Ok(())
                })?;
            }
            let output = Linear::new(b, "output", d, cfg.pose_dim)?;
            Ok(Denoiser {
                config: cfg.clone(),
                input,
                music,
                timestep,
                group,
                motion_blocks,
                group_blocks,
                output,
            })
        })
    }

    pub fn encode_music(&self, audio: &Tensor) -> Result<Tensor> {
        self.music.forward(audio)
    }

    pub fn group_embedding(&self, tokens: &Tensor, n_dancers: usize, z: &Tensor) -> Result<Tensor> {
        self.group.forward(tokens, n_dancers, z)
    }

    /// Conditioning context: music tokens followed by the step embedding,
    /// (B, T + 1, d).
    pub fn context(&self, tokens: &Tensor, steps: &[usize]) -> Result<Tensor> {
        let tau = self.timestep.forward(steps, tokens.dtype(), tokens.device())?;
        Ok(Tensor::cat(&[tokens, &tau.unsqueeze(1)?], 1)?)
    }

    /// `x_m`: (B, N, T, 147); `tokens`: (B, T, d); `w`: (B, d); one step per
    /// batch row.
    pub fn forward(&self, x_m: &Tensor, steps: &[usize], tokens: &Tensor, w: &Tensor) -> Result<Tensor> {
        let context = self.context(tokens, steps)?;
        self.forward_with_context(x_m, &context, w)
    }

    pub fn forward_with_context(&self, x_m: &Tensor, context: &Tensor, w: &Tensor) -> Result<Tensor> {
        let (b, n, t, p) = x_m.dims4()?;
        let d = self.config.d_model;
        if p != self.config.pose_dim {
            return Err(Error::ShapeMismatch(format!("pose width {p}, expected {}", self.config.pose_dim)));
        }
        if n > self.config.n_max {
            return Err(Error::TooManyDancers {
                got: n,
                max: self.config.n_max,
            });
        }
        if context.dims() != [b, t + 1, d] {
            return Err(Error::ShapeMismatch(format!(
                "context {:?} for batch {b}, {t} frames, width {d}",
                context.dims()
            )));
        }
        if w.dims() != [b, d] {
            return Err(Error::ShapeMismatch(format!("group embedding {:?}", w.dims())));
        }
        let pe = positional_table(t, d, x_m.dtype(), x_m.device())?;
        let h = self.input.forward(x_m)?.broadcast_add(&pe)?;
        let mut h = h.reshape((b, n * t, d))?;
        let local = AttentionMask::local(n, t);
        let global = AttentionMask::global(n, t);
        for (i, block) in self.motion_blocks.iter().enumerate() {
            h = block.forward(&h, context, &local)?;
            if let Some(g) = self.group_blocks.get(i) {
                h = g.forward(&h, w, &global)?;
            }
        }
        Ok(self.output.forward(&h)?.reshape((b, n, t, p))?)
    }

    /// Convenience wrapper from raw inputs: `audio` (B, T, D_a), `z` (B, d).
    pub fn denoise(&self, x_m: &Tensor, m: usize, audio: &Tensor, z: &Tensor) -> Result<Tensor> {
        let (b, n, _, _) = x_m.dims4()?;
        let tokens = self.encode_music(audio)?;
        let w = self.group_embedding(&tokens, n, z)?;
        self.forward(x_m, &vec![m; b], &tokens, &w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::process::randn;
    use crate::nn::params::ParamStore;
    use candle_core::{DType, Device};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(group: bool) -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            ff_size: 32,
            mapping_hidden: 16,
            audio_dim: 6,
            use_group_attention: group,
            ..ModelConfig::toy()
        }
    }

    fn rand(seed: u64, shape: &[usize]) -> Tensor {
        randn(shape.to_vec(), DType::F64, &Device::Cpu, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn max_abs(t: &Tensor) -> f64 {
        t.abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f64>().unwrap()
    }

    fn perturb_dancer(x: &Tensor, dancer: usize) -> Tensor {
        let (b, n, t, p) = x.dims4().unwrap();
        let bump = rand(99, &[b, 1, t, p]);
        let parts: Vec<Tensor> = (0..n)
            .map(|i| {
                let s = x.narrow(1, i, 1).unwrap();
                if i == dancer {
                    (s + &bump).unwrap()
                } else {
                    s
                }
            })
            .collect();
        Tensor::cat(&parts, 1).unwrap()
    }

    #[test]
    fn shape_and_determinism() {
        let c = small(true);
        let mut s = ParamStore::new(DType::F64);
        let net = Denoiser::new(&mut s.builder(0), &c).unwrap();
        let x = rand(1, &[1, 3, 20, 147]);
        let audio = rand(2, &[1, 20, 6]);
        let z = rand(3, &[1, 16]);
        let a = net.denoise(&x, 10, &audio, &z).unwrap();
        assert_eq!(a.dims(), &[1, 3, 20, 147]);
        let b = net.denoise(&x, 10, &audio, &z).unwrap();
        assert_eq!(max_abs(&(a - b).unwrap()), 0.0);
        assert!(net.denoise(&rand(1, &[1, 3, 20, 146]), 10, &audio, &z).is_err());
        assert!(matches!(
            net.denoise(&rand(1, &[1, 6, 20, 147]), 10, &audio, &z),
            Err(Error::TooManyDancers { .. })
        ));
    }

    #[test]
    fn local_only_isolates_dancers() {
        let c = small(false);
        let mut s = ParamStore::new(DType::F64);
        let net = Denoiser::new(&mut s.builder(0), &c).unwrap();
        let x = rand(4, &[1, 3, 12, 147]);
        let audio = rand(5, &[1, 12, 6]);
        let z = rand(6, &[1, 16]);
        let a = net.denoise(&x, 30, &audio, &z).unwrap();
        let b = net.denoise(&perturb_dancer(&x, 1), 30, &audio, &z).unwrap();
        let leak = max_abs(&(a.narrow(1, 0, 1).unwrap() - b.narrow(1, 0, 1).unwrap()).unwrap());
        assert!(leak < 1e-6, "leak {leak}");
    }

    #[test]
    fn full_model_propagates_across_dancers() {
        let c = small(true);
        let mut s = ParamStore::new(DType::F64);
        let net = Denoiser::new(&mut s.builder(0), &c).unwrap();
        let x = rand(4, &[1, 3, 12, 147]);
        let audio = rand(5, &[1, 12, 6]);
        let z = rand(6, &[1, 16]);
        let a = net.denoise(&x, 30, &audio, &z).unwrap();
        let b = net.denoise(&perturb_dancer(&x, 1), 30, &audio, &z).unwrap();
        assert!(max_abs(&(a.narrow(1, 0, 1).unwrap() - b.narrow(1, 0, 1).unwrap()).unwrap()) > 1e-6);
    }

    #[test]
    fn permuting_dancers_permutes_outputs() {
        let c = small(true);
        let mut s = ParamStore::new(DType::F64);
        let net = Denoiser::new(&mut s.builder(0), &c).unwrap();
        let x = rand(7, &[1, 3, 10, 147]);
        let audio = rand(8, &[1, 10, 6]);
        let z = rand(9, &[1, 16]);
        let perm = [2usize, 0, 1];
        let permute = |t: &Tensor| {
            Tensor::cat(&perm.iter().map(|&i| t.narrow(1, i, 1).unwrap()).collect::<Vec<_>>(), 1).unwrap()
        };
        let a = permute(&net.denoise(&x, 5, &audio, &z).unwrap());
        let b = net.denoise(&permute(&x), 5, &audio, &z).unwrap();
        // Reductions run in a different order after permutation, so equality
        // holds to rounding.
        assert!(max_abs(&(a - b).unwrap()) < 1e-12);
    }

    #[test]
    fn timestep_reaches_motion_path() {
        let c = small(true);
        let mut s = ParamStore::new(DType::F64);
        let net = Denoiser::new(&mut s.builder(0), &c).unwrap();
        let x = rand(10, &[1, 2, 8, 147]);
        let audio = rand(11, &[1, 8, 6]);
        let z = rand(12, &[1, 16]);
        let a = net.denoise(&x, 5, &audio, &z).unwrap();
        let b = net.denoise(&x, 80, &audio, &z).unwrap();
        assert!(max_abs(&(a - b).unwrap()) > 1e-6);
    }

    #[test]
    fn cross_attention_with_zero_keys_averages_context_values() {
        let c = small(true);
        let mut s = ParamStore::new(DType::F64);
        let net = Denoiser::new(&mut s.builder(0), &c).unwrap();
        let mut block = net.motion_blocks[0].clone();
        block.cross.k.weight = block.cross.k.weight.zeros_like().unwrap();
        block.cross.k.bias = block.cross.k.bias.zeros_like().unwrap();
        let x = rand(13, &[1, 6, 16]);
        let ctx = rand(14, &[1, 5, 16]);
        let out = block.cross.context(&x, &ctx, None).unwrap();
        let v_mean = block.cross.v.forward(&ctx).unwrap().mean_keepdim(1).unwrap();
        assert!(max_abs(&out.broadcast_sub(&v_mean).unwrap()) < 1e-12);
        let y = block.cross_attend(&x, &ctx).unwrap();
        assert_eq!(y.dims(), x.dims());
    }
}
