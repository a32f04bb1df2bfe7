//! Chunked sampling with blending after every reverse step.

use candle_core::{DType, Device, Tensor};
use ndarray::{s, Array3, Array4, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blend::{blend_overlap, crossfade};
use super::hungarian::{match_dancers_hungarian, DancerAssignment};
use super::plan::{chunk_schedule, ChunkPlan};
use crate::contrastive::EncoderGuide;
use crate::diffusion::{randn, run_chain_over, sample_group_dance, tensor_to_group, GuidanceConfig, GuidanceScore, NoiseSchedule, ReverseSampler};
use crate::error::{Error, Result};
use crate::motion::GroupSequence;
use crate::nn::{ConditionedDenoiser, GcdModel};
use crate::synth::AudioFeatureSequence;

/// Five seconds at 30 fps.
pub const DEFAULT_WINDOW_FRAMES: usize = 150;

pub struct LongOutput {
    pub group: GroupSequence,
    pub plan: ChunkPlan,
    /// One per adjacent chunk pair, fixed at the first blend.
    pub assignments: Vec<DancerAssignment>,
}

fn to_array4(t: &Tensor) -> Result<Array4<f64>> {
    let (c, n, w, p) = t.dims4()?;
    let flat: Vec<f64> = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    Array4::from_shape_vec((c, n, w, p), flat).map_err(|e| Error::BadShape(e.to_string()))
}

fn to_tensor(a: &Array4<f64>, dtype: DType, device: &Device) -> Result<Tensor> {
    let flat: Vec<f64> = a.iter().copied().collect();
    Ok(Tensor::from_vec(flat, a.dim(), device)?.to_dtype(dtype)?)
}

/// Mean over overlap frames of the Euclidean distance between packed pose
/// vectors; `tail` and `head` are (N, L, 147).
pub fn correspondence_cost(tail: ArrayView3<'_, f64>, head: ArrayView3<'_, f64>) -> Vec<Vec<f64>> {
    let (n, len, _) = tail.dim();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let mut sum = 0.0;
                    for f in 0..len {
                        let a = tail.slice(s![i, f, ..]);
                        let b = head.slice(s![j, f, ..]);
                        sum += a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                    }
                    sum / len.max(1) as f64
                })
                .collect()
        })
        .collect()
}

/// Reorders the dancers of `chunk` so that slot `i` holds the dancer
/// matched to current dancer `i`.
fn permute_chunk(arr: &mut Array4<f64>, chunk: usize, perm: &[usize]) {
    let src = arr.index_axis(Axis(0), chunk).to_owned();
    let mut dst = arr.index_axis_mut(Axis(0), chunk);
    for (i, &j) in perm.iter().enumerate() {
        dst.index_axis_mut(Axis(0), i).assign(&src.index_axis(Axis(0), j));
    }
}

/// Crossfades every overlap region in place, writing the blend into both
/// chunks.
fn crossfade_all(arr: &mut Array4<f64>, hop: usize) -> Result<()> {
    let (c, _, w, _) = arr.dim();
    for k in 0..c.saturating_sub(1) {
        let blended = crossfade(
            arr.slice(s![k, .., w - hop.., ..]),
            arr.slice(s![k + 1, .., ..hop, ..]),
        )?;
        arr.slice_mut(s![k, .., w - hop.., ..]).assign(&blended);
        arr.slice_mut(s![k + 1, .., ..hop, ..]).assign(&blended);
    }
    Ok(())
}

/// Joins clean chunks into (N, T_total, 147), SLERP-blending each overlap.
fn assemble(x0: &Array4<f64>, plan: &ChunkPlan) -> Result<Array3<f64>> {
    let (c, n, w, p) = x0.dim();
    let hop = plan.overlap_frames;
    let mut out = Array3::zeros((n, c * hop + hop, p));
    for k in 0..c {
        let start = plan.windows[k].0;
        // Region owned by this chunk alone.
        let lo = if k == 0 { 0 } else { hop };
        let hi = if k + 1 == c { w } else { w - hop };
        out.slice_mut(s![.., start + lo..start + hi, ..]).assign(&x0.slice(s![k, .., lo..hi, ..]));
        if k + 1 < c {
            let blended = blend_overlap(x0.slice(s![k, .., w - hop.., ..]), x0.slice(s![k + 1, .., ..hop, ..]))?;
            out.slice_mut(s![.., start + w - hop..start + w, ..]).assign(&blended);
        }
    }
    Ok(out.slice(s![.., ..plan.total_frames, ..]).to_owned())
}

#[allow(clippy::too_many_arguments)]
pub fn generate_long_detailed(
    model: &GcdModel,
    sched: &NoiseSchedule,
    audio: &AudioFeatureSequence,
    n_dancers: usize,
    window_frames: usize,
    sampler: &dyn ReverseSampler,
    gamma: f64,
    seed: u64,
) -> Result<LongOutput> {
    let total = audio.n_frames();
    let plan = chunk_schedule(total, window_frames)?;
    let cfg = &model.config;
    if n_dancers == 0 || n_dancers > cfg.n_max {
        return Err(Error::TooManyDancers {
            got: n_dancers,
            max: cfg.n_max,
        });
    }
    if plan.len() == 1 {
        let group = sample_group_dance(model, sched, audio, n_dancers, total, sampler, gamma, seed)?;
        return Ok(LongOutput {
            group,
            plan,
            assignments: Vec::new(),
        });
    }
    let dtype = model.denoiser.input.weight.dtype();
    let device = model.denoiser.input.weight.device().clone();
    let c = plan.len();
    let hop = plan.overlap_frames;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = randn((1, cfg.d_model), dtype, &device, &mut rng)?;
    let x_start = randn((c, n_dancers, window_frames, cfg.pose_dim), dtype, &device, &mut rng)?;

    let mut feats = Vec::with_capacity(c * window_frames * audio.dim());
    for &(start, _) in &plan.windows {
        feats.extend(audio.crop(start, window_frames).features.iter().copied());
    }
    let audio_t = Tensor::from_vec(feats, (c, window_frames, audio.dim()), &device)?.to_dtype(dtype)?;
    let tokens = model.denoiser.encode_music(&audio_t)?;
    let z_c = z.broadcast_as((c, cfg.d_model))?.contiguous()?;
    let w = model.denoiser.group_embedding(&tokens, n_dancers, &z_c)?;
    let predictor = ConditionedDenoiser {
        denoiser: &model.denoiser,
        tokens,
        w: w.clone(),
    };
    let guide = EncoderGuide {
        encoder: &model.encoder,
        w,
    };
    let guidance = GuidanceConfig::new(gamma, Some(&guide as &dyn GuidanceScore))?;
    let steps = sampler.timesteps(sched)?;

    let mut assignments: Vec<DancerAssignment> = Vec::new();
    let x0 = run_chain_over(&predictor, sampler, sched, &steps, x_start, &guidance, &mut rng, |info, next| {
        // The clean output is merged by SLERP during assembly instead.
        if info.m_prev == 0 && assignments.len() == c - 1 {
            return Ok(next);
        }
        let mut state = to_array4(&next)?;
        if assignments.is_empty() {
            let mut est = to_array4(info.x0_hat)?;
            for k in 0..c - 1 {
                let cost = correspondence_cost(
                    est.slice(s![k, .., window_frames - hop.., ..]),
                    est.slice(s![k + 1, .., ..hop, ..]),
                );
                let a = match_dancers_hungarian(&cost)?;
                permute_chunk(&mut est, k + 1, &a.permutation);
                permute_chunk(&mut state, k + 1, &a.permutation);
                assignments.push(a);
            }
        }
        if info.m_prev > 0 {
            crossfade_all(&mut state, hop)?;
        }
        to_tensor(&state, dtype, &device)
    })?;

    let merged = assemble(&to_array4(&x0)?, &plan)?;
    let dims = merged.dim();
    let flat: Vec<f64> = merged.into_iter().collect();
    let group = tensor_to_group(&Tensor::from_vec(flat, dims, &Device::Cpu)?, audio.fps)?;
    Ok(LongOutput {
        group,
        plan,
        assignments,
    })
}

/// Generates a group dance for the whole track; tracks of a single window
/// take the ordinary sampling path.
#[allow(clippy::too_many_arguments)]
pub fn generate_long(
    model: &GcdModel,
    sched: &NoiseSchedule,
    audio: &AudioFeatureSequence,
    n_dancers: usize,
    window_frames: usize,
    sampler: &dyn ReverseSampler,
    gamma: f64,
    seed: u64,
) -> Result<GroupSequence> {
    Ok(generate_long_detailed(model, sched, audio, n_dancers, window_frames, sampler, gamma, seed)?.group)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::Ddim;
    use crate::nn::{ModelConfig, ParamStore};
    use crate::synth::generate_music_track;

    fn tiny_model() -> (GcdModel, NoiseSchedule) {
        let cfg = ModelConfig {
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            ff_size: 32,
            mapping_hidden: 16,
            diffusion_steps: 20,
            ..ModelConfig::toy()
        };
        let mut store = ParamStore::new(DType::F32);
        GcdModel::init(&mut store, &cfg, 3).unwrap();
        let model = GcdModel::frozen(&mut store, &cfg).unwrap();
        (model, NoiseSchedule::cosine(20, 0.008).unwrap())
    }

    #[test]
    fn single_window_matches_plain_sampling() {
        let (model, sched) = tiny_model();
        let audio = generate_music_track(100.0, 1.0, 30, 2).unwrap();
        let sampler = Ddim { steps: 5 };
        let long = generate_long(&model, &sched, &audio, 2, 30, &sampler, 0.0, 11).unwrap();
        let plain = sample_group_dance(&model, &sched, &audio, 2, 30, &sampler, 0.0, 11).unwrap();
        assert_eq!(long, plain);
    }

    #[test]
    fn multi_chunk_length_and_determinism() {
        let (model, sched) = tiny_model();
        let audio = generate_music_track(100.0, 2.3, 30, 2).unwrap();
        let sampler = Ddim { steps: 4 };
        let out = generate_long_detailed(&model, &sched, &audio, 3, 30, &sampler, 0.0, 5).unwrap();
        assert_eq!(out.group.n_frames(), 69);
        assert_eq!(out.group.n_dancers(), 3);
        assert_eq!(out.plan.len(), 4);
        assert_eq!(out.assignments.len(), 3);
        let again = generate_long(&model, &sched, &audio, 3, 30, &sampler, 0.0, 5).unwrap();
        assert_eq!(out.group, again);
        let short = generate_music_track(100.0, 0.5, 30, 2).unwrap();
        assert!(matches!(
            generate_long(&model, &sched, &short, 2, 30, &sampler, 0.0, 5),
            Err(Error::AudioTooShort { .. })
        ));
    }

    #[test]
    fn assembly_keeps_owned_regions() {
        let plan = chunk_schedule(10, 4).unwrap();
        let mut x0 = Array4::zeros((plan.len(), 1, 4, crate::motion::POSE_DIM));
        for k in 0..plan.len() {
            for f in 0..4 {
                x0[[k, 0, f, 0]] = (plan.windows[k].0 + f) as f64;
                for j in 0..crate::motion::NUM_JOINTS {
                    x0[[k, 0, f, 3 + 6 * j]] = 1.0;
                    x0[[k, 0, f, 7 + 6 * j]] = 1.0;
                }
            }
        }
        let out = assemble(&x0, &plan).unwrap();
        assert_eq!(out.dim().1, 10);
        for f in 0..10 {
            assert!((out[[0, f, 0]] - f as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn correspondence_recovers_a_shuffle() {
        let mut a = Array3::zeros((3, 2, 4));
        for d in 0..3 {
            a.slice_mut(s![d, .., ..]).fill(d as f64 * 10.0);
        }
        let mut b = a.clone();
        b.slice_mut(s![0, .., ..]).fill(20.0);
        b.slice_mut(s![2, .., ..]).fill(0.0);
        let m = match_dancers_hungarian(&correspondence_cost(a.view(), b.view())).unwrap();
        assert_eq!(m.permutation, vec![2, 1, 0]);
        assert_eq!(m.cost, 0.0);
    }
}
