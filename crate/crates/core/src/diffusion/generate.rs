//! Sampling group dances from a model.

use candle_core::{DType, Tensor};
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::process::{randn, GuidanceConfig, GuidanceScore};
use super::sampler::ReverseSampler;
use super::sampling::run_reverse_chain;
use super::schedule::NoiseSchedule;
use crate::contrastive::EncoderGuide;
use crate::error::{Error, Result};
use crate::motion::GroupSequence;
use crate::nn::model::audio_tensor;
use crate::nn::{ConditionedDenoiser, GcdModel};
use crate::synth::AudioFeatureSequence;

/// A raw sample and the group embedding it was generated under.
pub struct SampleOutput {
    /// (1, N, T, 147).
    pub x0: Tensor,
    pub w: Tensor,
}

pub fn tensor_to_group(x: &Tensor, fps: u32) -> Result<GroupSequence> {
    let x = x.to_dtype(DType::F64)?;
    let (n, t, p) = match x.rank() {
        4 => {
            let (_, n, t, p) = x.dims4()?;
            (n, t, p)
        }
        _ => x.dims3()?,
    };
    let flat: Vec<f64> = x.flatten_all()?.to_vec1()?;
    let arr = Array3::from_shape_vec((n, t, p), flat).map_err(|e| Error::BadShape(e.to_string()))?;
    GroupSequence::unpack(&arr, fps)?.orthonormalized()
}

/// Draws `z` then `x_M` from the seeded stream and runs the chain.
#[allow(clippy::too_many_arguments)]
pub fn sample_packed(
    model: &GcdModel,
    sched: &NoiseSchedule,
    audio: &AudioFeatureSequence,
    n_dancers: usize,
    n_frames: usize,
    sampler: &dyn ReverseSampler,
    gamma: f64,
    seed: u64,
) -> Result<SampleOutput> {
    let cfg = &model.config;
    if n_dancers == 0 || n_dancers > cfg.n_max {
        return Err(Error::TooManyDancers {
            got: n_dancers,
            max: cfg.n_max,
        });
    }
    if n_frames == 0 {
        return Err(Error::BadDuration);
    }
    let dtype = model.denoiser.input.weight.dtype();
    let device = model.denoiser.input.weight.device().clone();
    let audio = audio.crop(0, n_frames);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = randn((1, cfg.d_model), dtype, &device, &mut rng)?;
    let x_start = randn((1, n_dancers, n_frames, cfg.pose_dim), dtype, &device, &mut rng)?;
    let tokens = model.denoiser.encode_music(&audio_tensor(&audio.features, dtype, &device)?)?;
    let w = model.denoiser.group_embedding(&tokens, n_dancers, &z)?;
    let predictor = ConditionedDenoiser {
        denoiser: &model.denoiser,
        tokens,
        w: w.clone(),
    };
    let guide = EncoderGuide {
        encoder: &model.encoder,
        w: w.clone(),
    };
    let guidance = GuidanceConfig::new(gamma, Some(&guide as &dyn GuidanceScore))?;
    let x0 = run_reverse_chain(&predictor, sampler, sched, x_start, &guidance, &mut rng)?;
    Ok(SampleOutput { x0, w })
}

#[allow(clippy::too_many_arguments)]
pub fn sample_group_dance(
    model: &GcdModel,
    sched: &NoiseSchedule,
    audio: &AudioFeatureSequence,
    n_dancers: usize,
    n_frames: usize,
    sampler: &dyn ReverseSampler,
    gamma: f64,
    seed: u64,
) -> Result<GroupSequence> {
    let out = sample_packed(model, sched, audio, n_dancers, n_frames, sampler, gamma, seed)?;
    tensor_to_group(&out.x0, audio.fps)
}
