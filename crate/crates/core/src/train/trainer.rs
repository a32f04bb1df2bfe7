//! The optimization loop.
//!
//! Every iteration draws its batch, crops, steps, noise and negatives from a
//! stream derived from `(seed, iteration)`, so a run resumed from a
//! checkpoint replays the same draws as an uninterrupted one.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
use super::config::TrainConfig;
use super::losses::{geometric_losses, simple_loss, total_loss, LossComponents};
use super::optim::{Adam, AdamConfig};
use crate::contrastive::{construct_negative_arrays, contrastive_training_scores, nce_loss};
use crate::diffusion::{q_sample, randn, NoiseSchedule, COSINE_OFFSET};
use crate::error::{Error, Result};
use crate::motion::Skeleton;
use crate::nn::model::audio_tensor;
use crate::nn::{GcdModel, ModelConfig, ParamStore};
use crate::synth::dataset::{load_manifest, SynthSample};

pub const LOSS_CSV_HEADER: &str = "iteration,l_simple,l_pos,l_vel,l_foot,l_nce,total";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOSS_FILE: &str = "loss.csv";

/// One paired training sequence: audio features (T, D_a) and packed motion
/// (N, T, 147).
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub audio: Array2<f64>,
    pub motion: Array3<f64>,
    pub fps: u32,
}

impl TrainingExample {
    pub fn n_frames(&self) -> usize {
        self.motion.dim().1
    }
}

impl From<&SynthSample> for TrainingExample {
    fn from(s: &SynthSample) -> Self {
        TrainingExample {
            audio: s.audio.features.clone(),
            motion: s.group.pack(),
            fps: s.group.fps(),
        }
    }
}

pub fn load_examples(manifest: &Path) -> Result<Vec<TrainingExample>> {
    Ok(load_manifest(manifest)?
        .into_iter()
        .map(|p| TrainingExample {
            audio: p.audio.features,
            motion: p.group.pack(),
            fps: p.group.fps(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    pub losses: LossComponents,
    pub total: f64,
}

impl TrainRecord {
    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration, l.simple, l.pos, l.vel, l.foot, l.nce, self.total
        )
    }
}

pub fn write_loss_csv(path: &Path, history: &[TrainRecord]) -> Result<()> {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// The crop, step and noise for one anchor, fixed before any forward pass.
struct AnchorDraw {
    example: usize,
    start: usize,
    len: usize,
    m: usize,
}

/// Scalar tensors for one anchor's loss terms.
struct AnchorLosses {
    simple: Tensor,
    pos: Option<Tensor>,
    vel: Option<Tensor>,
    foot: Option<Tensor>,
    nce: Option<Tensor>,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn array3_tensor(a: &Array3<f64>, dtype: DType, device: &Device) -> Result<Tensor> {
    let dims = a.dim();
    let flat: Vec<f64> = a.iter().copied().collect();
    Ok(Tensor::from_vec(flat, dims, device)?.to_dtype(dtype)?)
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model_config: ModelConfig,
    pub store: ParamStore,
    pub model: GcdModel,
    pub adam: Adam,
    pub schedule: NoiseSchedule,
    /// Completed iterations.
    pub iteration: usize,
    pub history: Vec<TrainRecord>,
    data: Vec<TrainingExample>,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: Vec<TrainingExample>) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        let model_config = config.model_config()?;
        let mut store = ParamStore::new(config.dtype()?);
        let model = GcdModel::init(&mut store, &model_config, config.seed)?;
        let schedule = NoiseSchedule::cosine(model_config.diffusion_steps, COSINE_OFFSET)?;
        let adam = Adam::new(Self::adam_config(&config));
        Ok(Trainer {
            config,
            model_config,
            store,
            model,
            adam,
            schedule,
            iteration: 0,
            history: Vec::new(),
            data,
        })
    }

    fn adam_config(config: &TrainConfig) -> AdamConfig {
        AdamConfig {
            clip_norm: (config.clip_norm > 0.0).then_some(config.clip_norm),
            ..AdamConfig::new(config.learning_rate)
        }
    }

    /// Restores parameters, optimizer moments and the iteration counter.
    /// `config` supplies the remaining run length and may differ from the
    /// saved one only in `iterations` and `checkpoint_every`.
    pub fn resume(config: TrainConfig, data: Vec<TrainingExample>, ck: Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(config, data)?;
        if ck.meta.model != t.model_config {
            return Err(Error::InvalidArgument("checkpoint model config differs from the run config".into()));
        }
        for (name, var) in ck.params.iter() {
            t.store.insert(name, var.as_tensor())?;
        }
        if t.store.len() != ck.params.len() {
            return Err(Error::CorruptCheckpoint("parameter set differs from the model".into()));
        }
        let dtype = t.store.dtype();
        for (name, m) in ck.adam_m {
            t.adam.m.insert(name, m.to_dtype(dtype)?);
        }
        for (name, v) in ck.adam_v {
            t.adam.v.insert(name, v.to_dtype(dtype)?);
        }
        t.adam.step = ck.meta.adam_step;
        t.iteration = ck.meta.iteration;
        Ok(t)
    }

    pub fn data(&self) -> &[TrainingExample] {
        &self.data
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            model: self.model_config.clone(),
            train: self.config.clone(),
            iteration: self.iteration,
            adam_step: self.adam.step,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.meta(), &self.store, Some(&self.adam))
    }

    pub fn stream_rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(stream);
        rng
    }

    fn draw_anchors(&self, rng: &mut ChaCha8Rng) -> Vec<AnchorDraw> {
        let m_max = self.model_config.diffusion_steps;
        (0..self.config.batch_size)
            .map(|_| {
                let example = rng.random_range(0..self.data.len());
                let t = self.data[example].n_frames();
                let len = self.config.window.min(t);
                let start = rng.random_range(0..=t - len);
                let m = rng.random_range(1..=m_max);
                AnchorDraw { example, start, len, m }
            })
            .collect()
    }

    fn anchor_losses(
        &self,
        draw: &AnchorDraw,
        crops: &[Array3<f64>],
        index: usize,
        with_nce: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<AnchorLosses> {
        let dtype = self.store.dtype();
        let device = self.store.device().clone();
        let ex = &self.data[draw.example];
        let den = &self.model.denoiser;
        let x0 = array3_tensor(&crops[index], dtype, &device)?;
        let (n, t, p) = crops[index].dim();
        let audio = ex.audio.slice(s![draw.start..draw.start + draw.len, ..]).to_owned();
        let tokens = den.encode_music(&audio_tensor(&audio, dtype, &device)?)?;
        let z = randn((1, self.model_config.d_model), dtype, &device, rng)?;
        let eps = randn((n, t, p), dtype, &device, rng)?;
        let w = den.group_embedding(&tokens, n, &z)?;

        let (x0_hat, nce) = if with_nce {
            let negs = construct_negative_arrays(crops, index, self.config.replace_prob, self.config.negatives, rng)?;
            let mixed = Tensor::stack(
                &negs
                    .iter()
                    .map(|a| array3_tensor(a, dtype, &device))
                    .collect::<Result<Vec<_>>>()?,
                0,
            )?;
            let sc = contrastive_training_scores(den, &self.model.encoder, &x0, &mixed, &tokens, &w, draw.m, &eps, &self.schedule)?;
            (sc.x0_hat.narrow(0, 0, 1)?.squeeze(0)?, Some(nce_loss(&sc.pos, &sc.neg)?))
        } else {
            let x_m = q_sample(&x0.unsqueeze(0)?, draw.m, &eps.unsqueeze(0)?, &self.schedule)?;
            (den.forward(&x_m, &[draw.m], &tokens, &w)?.squeeze(0)?, None)
        };

        let simple = simple_loss(&x0, &x0_hat)?;
        let (pos, vel, foot) = if self.config.use_geo && t >= 2 {
            let (a, b, c) = geometric_losses(&x0, &x0_hat, Skeleton::smpl(), ex.fps as f64)?;
            (Some(a), Some(b), Some(c))
        } else {
            (None, None, None)
        };
        Ok(AnchorLosses { simple, pos, vel, foot, nce })
    }

    /// Builds the batch-mean loss graph for the draws of `stream`.
    /// Returns the differentiable total and the host values of each term.
    pub fn batch_loss(&self, stream: u64) -> Result<(Tensor, LossComponents)> {
        let mut rng = self.stream_rng(stream);
        let draws = self.draw_anchors(&mut rng);
        let crops: Vec<Array3<f64>> = draws
            .iter()
            .map(|d| {
                self.data[d.example]
                    .motion
                    .slice(s![.., d.start..d.start + d.len, ..])
                    .to_owned()
            })
            .collect();
        let with_nce = self.config.nce_active();
        let wts = self.config.weights;
        let scale = 1.0 / draws.len() as f64;
        let mut total: Option<Tensor> = None;
        let mut comps = LossComponents::default();
        for (i, d) in draws.iter().enumerate() {
            let l = self.anchor_losses(d, &crops, i, with_nce, &mut rng)?;
            let mut term = l.simple.clone();
            comps.simple += scalar(&l.simple)? * scale;
            let weighted = [
                (&l.pos, wts.lambda_pos, &mut comps.pos),
                (&l.vel, wts.lambda_vel, &mut comps.vel),
                (&l.foot, wts.lambda_foot, &mut comps.foot),
                (&l.nce, wts.lambda_nce, &mut comps.nce),
            ];
            for (t, lambda, slot) in weighted {
                if let Some(t) = t {
                    *slot += scalar(t)? * scale;
                    if lambda != 0.0 {
                        term = (term + (t * lambda)?)?;
                    }
                }
            }
            let term = (term * scale)?;
            total = Some(match total {
                Some(acc) => (acc + term)?,
                None => term,
            });
        }
        Ok((total.expect("batch_size ≥ 1"), comps))
    }

    /// Runs one optimizer step and records its losses.
    pub fn step(&mut self) -> Result<TrainRecord> {
        let iteration = self.iteration;
        let (loss, comps) = self.batch_loss(iteration as u64 + 1)?;
        let total = total_loss(&comps, &self.config.weights);
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                detail: format!("{comps:?}"),
            });
        }
        let grads = loss.backward()?;
        self.adam.step(&self.store, &grads)?;
        self.iteration += 1;
        let rec = TrainRecord {
            iteration,
            losses: comps,
            total,
        };
        self.history.push(rec);
        Ok(rec)
    }

    /// Steps until `config.iterations` have completed, saving to `out_dir`
    /// every `checkpoint_every` iterations and at the end.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<()> {
        let mut csv = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(LOSS_FILE);
                let fresh = self.history.is_empty() && self.iteration == 0 || !path.exists();
                let mut f = fs::OpenOptions::new()
                    .create(true)
                    .append(!fresh)
                    .write(true)
                    .truncate(fresh)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                if fresh {
                    writeln!(f, "{LOSS_CSV_HEADER}").map_err(|e| Error::io(&path, e))?;
                }
                Some((f, path))
            }
            None => None,
        };
        while self.iteration < self.config.iterations {
            let rec = self.step()?;
            if let Some((f, path)) = csv.as_mut() {
                writeln!(f, "{}", rec.csv_row()).map_err(|e| Error::io(&*path, e))?;
            }
            if let Some(dir) = out_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && self.iteration % every == 0 && self.iteration < self.config.iterations {
                    self.save(&dir.join(format!("checkpoint_{:06}.ckpt", self.iteration)))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.save(&dir.join(CHECKPOINT_FILE))?;
        }
        Ok(())
    }

    /// Mean encoder score of anchors minus mean score of their mixed
    /// negatives over `batches` evaluation batches drawn from `examples`.
    pub fn contrastive_margin(&self, examples: &[TrainingExample], batches: usize, seed: u64) -> Result<f64> {
        let dtype = self.store.dtype();
        let device = self.store.device().clone();
        let den = &self.model.denoiser;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut pos_sum, mut neg_sum, mut pos_n, mut neg_n) = (0.0, 0.0, 0usize, 0usize);
        for _ in 0..batches {
            let picks: Vec<usize> = (0..self.config.batch_size.max(2)).map(|_| rng.random_range(0..examples.len())).collect();
            let len = picks.iter().map(|&i| examples[i].n_frames()).min().unwrap_or(0).min(self.config.window);
            let crops: Vec<Array3<f64>> = picks.iter().map(|&i| examples[i].motion.slice(s![.., 0..len, ..]).to_owned()).collect();
            for (a, &i) in picks.iter().enumerate() {
                let (n, t, p) = crops[a].dim();
                let audio = examples[i].audio.slice(s![0..len, ..]).to_owned();
                let tokens = den.encode_music(&audio_tensor(&audio, dtype, &device)?)?.detach();
                let z = randn((1, self.model_config.d_model), dtype, &device, &mut rng)?;
                let w = den.group_embedding(&tokens, n, &z)?.detach();
                let m = rng.random_range(1..=self.model_config.diffusion_steps);
                let eps = randn((n, t, p), dtype, &device, &mut rng)?;
                let negs = construct_negative_arrays(&crops, a, self.config.replace_prob, self.config.negatives.max(1), &mut rng)?;
                let mixed = Tensor::stack(&negs.iter().map(|x| array3_tensor(x, dtype, &device)).collect::<Result<Vec<_>>>()?, 0)?;
                let x0 = array3_tensor(&crops[a], dtype, &device)?;
                let sc = contrastive_training_scores(den, &self.model.encoder, &x0, &mixed, &tokens, &w, m, &eps, &self.schedule)?;
                let pos: Vec<f64> = sc.pos.to_dtype(DType::F64)?.to_vec1()?;
                let neg: Vec<f64> = sc.neg.to_dtype(DType::F64)?.to_vec1()?;
                pos_sum += pos.iter().sum::<f64>();
                neg_sum += neg.iter().sum::<f64>();
                pos_n += pos.len();
                neg_n += neg.len();
            }
        }
        Ok(pos_sum / pos_n.max(1) as f64 - neg_sum / neg_n.max(1) as f64)
    }
}

/// Result of a training run written to disk.
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub history: Vec<TrainRecord>,
}

/// Trains on the pairs listed in `manifest`, writing `loss.csv` and
/// `checkpoint.ckpt` into `out_dir`. With `resume`, continues from that
/// checkpoint up to `config.iterations`.
pub fn train(manifest: &Path, config: TrainConfig, out_dir: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    let data = load_examples(manifest)?;
    let mut trainer = match resume {
        Some(path) => Trainer::resume(config, data, load_checkpoint(path)?)?,
        None => Trainer::new(config, data)?,
    };
    trainer.run(Some(out_dir))?;
    Ok(TrainOutcome {
        checkpoint: out_dir.join(CHECKPOINT_FILE),
        history: trainer.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_samples, SynthDatasetSpec};

    pub(crate) fn tiny_config() -> TrainConfig {
        TrainConfig {
            model: "toy".into(),
            learning_rate: 1e-3,
            batch_size: 2,
            iterations: 3,
            window: 12,
            diffusion_steps: Some(20),
            negatives: 2,
            ..TrainConfig::default()
        }
    }

    fn data(n: usize) -> Vec<TrainingExample> {
        let spec = SynthDatasetSpec {
            n_sequences: n,
            duration_s: 1.0,
            seed: 9,
            n_dancers_range: (2, 3),
            ..Default::default()
        };
        synth_samples(&spec).unwrap().iter().map(TrainingExample::from).collect()
    }

    #[test]
    fn reproducible_histories() {
        let run = || {
            let mut t = Trainer::new(tiny_config(), data(4)).unwrap();
            t.run(None).unwrap();
            t.history.iter().map(|r| r.total).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert_eq!(a, run());
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..tiny_config()
        };
        let mut t = Trainer::new(cfg, data(4)).unwrap();
        let before = t.store.snapshot().unwrap();
        let probe = |t: &Trainer| t.batch_loss(0).unwrap().1;
        let first = probe(&t);
        t.run(None).unwrap();
        assert_eq!(t.store.snapshot().unwrap(), before);
        assert_eq!(probe(&t), first);
    }

    #[test]
    fn ablation_flags_change_terms() {
        let mut t = Trainer::new(
            TrainConfig {
                use_geo: false,
                use_nce: false,
                ..tiny_config()
            },
            data(3),
        )
        .unwrap();
        let r = t.step().unwrap();
        assert_eq!((r.losses.pos, r.losses.vel, r.losses.foot, r.losses.nce), (0.0, 0.0, 0.0, 0.0));
        let mut full = Trainer::new(tiny_config(), data(3)).unwrap();
        let r = full.step().unwrap();
        assert!(r.losses.pos > 0.0 && r.losses.nce > 0.0);

        let no_global = Trainer::new(
            TrainConfig {
                use_group_attention: false,
                ..tiny_config()
            },
            data(3),
        )
        .unwrap();
        assert!(no_global.model.denoiser.group_blocks.is_empty());
        assert!(!full.model.denoiser.group_blocks.is_empty());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            iterations: 4,
            ..tiny_config()
        };
        let mut straight = Trainer::new(cfg.clone(), data(4)).unwrap();
        straight.run(None).unwrap();

        let mut first = Trainer::new(TrainConfig { iterations: 2, ..cfg.clone() }, data(4)).unwrap();
        first.run(Some(dir.path())).unwrap();
        let ck = load_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        let mut second = Trainer::resume(cfg, data(4), ck).unwrap();
        second.run(Some(dir.path())).unwrap();
        for (a, b) in straight.history[2..].iter().zip(&second.history) {
            assert_eq!(a.iteration, b.iteration);
            assert!((a.total - b.total).abs() < 1e-6, "{} vs {}", a.total, b.total);
        }
        let csv = fs::read_to_string(dir.path().join(LOSS_FILE)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], LOSS_CSV_HEADER);
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn rejects_empty_data() {
        assert!(matches!(
            Trainer::new(tiny_config(), Vec::new()),
            Err(Error::TooFewSamples { .. })
        ));
    }
}
