//! Synthetic music features with a planted beat grid, the audio feature file
//! format, and beat re-detection.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_AUDIO_DIM: usize = 32;
/// Feature channel that carries the beat pulse.
pub const PULSE_CHANNEL: usize = 0;
const PULSE_DECAY_FRAMES: f64 = 2.0;
const PEAK_THRESHOLD: f64 = 0.5;
const N_HARMONICS: usize = 8;
const N_BANDS: usize = 15;

/// Per-frame music features (T × D_a) at `fps`, plus the beat grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatureSequence {
    pub features: Array2<f64>,
    pub fps: u32,
    pub beat_frames: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AudioFile {
    fps: u32,
    d_a: usize,
    beat_frames: Vec<usize>,
    features: Vec<Vec<f64>>,
}

impl AudioFeatureSequence {
    pub fn n_frames(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.n_frames();
        if self.beat_frames.iter().any(|&b| b >= t) {
            return Err(Error::BadShape("beat frame outside the track".into()));
        }
        if self.beat_frames.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::BadShape("beat frames must be strictly increasing".into()));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadShape("non-finite audio feature".into()));
        }
        if self.fps == 0 {
            return Err(Error::InvalidArgument("fps must be positive".into()));
        }
        Ok(())
    }

    /// Mean frame distance between consecutive beats, if at least two exist.
    pub fn beat_period(&self) -> Option<f64> {
        let b = &self.beat_frames;
        (b.len() >= 2).then(|| (b[b.len() - 1] - b[0]) as f64 / (b.len() - 1) as f64)
    }

    /// Frames `[start, start + len)`; frames past the end repeat the last row.
    pub fn crop(&self, start: usize, len: usize) -> Self {
        let t = self.n_frames();
        let features = Array2::from_shape_fn((len, self.dim()), |(f, c)| {
            self.features[[(start + f).min(t - 1), c]]
        });
        let beat_frames = self
            .beat_frames
            .iter()
            .filter(|&&b| b >= start && b < start + len.min(t.saturating_sub(start)))
            .map(|&b| b - start)
            .collect();
        AudioFeatureSequence {
            features,
            fps: self.fps,
            beat_frames,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = AudioFile {
            fps: self.fps,
            d_a: self.dim(),
            beat_frames: self.beat_frames.clone(),
            features: self.features.outer_iter().map(|r| r.to_vec()).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: AudioFile = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let t = file.features.len();
        if file.features.iter().any(|r| r.len() != file.d_a) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("every feature row must have d_a = {} values", file.d_a),
            });
        }
        let flat: Vec<f64> = file.features.into_iter().flatten().collect();
        let features = Array2::from_shape_vec((t, file.d_a), flat)
            .map_err(|e| Error::BadShape(e.to_string()))?;
        let audio = AudioFeatureSequence {
            features,
            fps: file.fps,
            beat_frames: file.beat_frames,
        };
        audio.validate()?;
        Ok(audio)
    }
}

pub fn frames_for_duration(duration_s: f64, fps: u32) -> Result<usize> {
    let exact = duration_s * fps as f64;
    let t = exact.round();
    if (exact - t).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "duration {duration_s} s at {fps} fps is not a whole number of frames"
        )));
    }
    if t < 1.0 {
        return Err(Error::BadDuration);
    }
    Ok(t as usize)
}

/// Beat-pulse channel, beat-locked harmonics, slow band envelopes and seeded
/// noise. Beats fall on `round(k · fps · 60 / bpm)`.
pub fn generate_music_track(bpm: f64, duration_s: f64, fps: u32, seed: u64) -> Result<AudioFeatureSequence> {
    if !(bpm > 0.0) {
        return Err(Error::InvalidArgument(format!("bpm must be positive, got {bpm}")));
    }
    let t = frames_for_duration(duration_s, fps)?;
    let period = fps as f64 * 60.0 / bpm;
    let beat_frames: Vec<usize> = (0..)
        .map(|k| (k as f64 * period).round() as usize)
        .take_while(|&b| b < t)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = DEFAULT_AUDIO_DIM;
    let mut features = Array2::zeros((t, d));

    let mut last_beat: Option<usize> = None;
    let mut next = 0;
    for f in 0..t {
        if next < beat_frames.len() && beat_frames[next] == f {
            last_beat = Some(f);
            next += 1;
        }
        if let Some(b) = last_beat {
            features[[f, PULSE_CHANNEL]] = (-((f - b) as f64) / PULSE_DECAY_FRAMES).exp();
        }
    }

    for h in 0..N_HARMONICS {
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        let gain: f64 = rng.random_range(0.3..1.0);
        let mult = (h / 2 + 1) as f64;
        for f in 0..t {
            let x = 2.0 * PI * mult * f as f64 / period;
            let v = if h % 2 == 0 { (x + phase).cos() } else { (x + phase).sin() };
            features[[f, 1 + h]] = gain * v;
        }
    }

    for b in 0..N_BANDS {
        let freq: f64 = rng.random_range(0.05..1.5);
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        let level: f64 = rng.random_range(0.2..0.8);
        for f in 0..t {
            let x = 2.0 * PI * freq * f as f64 / fps as f64 + phase;
            features[[f, 1 + N_HARMONICS + b]] = level * (0.5 + 0.5 * x.sin());
        }
    }

    for c in (1 + N_HARMONICS + N_BANDS)..d {
        for f in 0..t {
            let n: f64 = rng.sample(StandardNormal);
            features[[f, c]] = 0.1 * n;
        }
    }

    Ok(AudioFeatureSequence {
        features,
        fps,
        beat_frames,
    })
}

/// Onset envelope of the pulse channel (half-wave rectified difference)
/// followed by 3-frame peak picking at half the envelope maximum.
pub fn extract_music_beats(audio: &AudioFeatureSequence) -> Vec<usize> {
    let t = audio.n_frames();
    if t == 0 || audio.dim() == 0 {
        return Vec::new();
    }
    let pulse = audio.features.column(PULSE_CHANNEL);
    let env: Vec<f64> = (0..t)
        .map(|f| {
            let prev = if f == 0 { 0.0 } else { pulse[f - 1] };
            (pulse[f] - prev).max(0.0)
        })
        .collect();
    let max = env.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    let thresh = PEAK_THRESHOLD * max;
    (0..t)
        .filter(|&f| {
            let left = if f == 0 { f64::NEG_INFINITY } else { env[f - 1] };
            let right = if f + 1 == t { f64::NEG_INFINITY } else { env[f + 1] };
            env[f] >= thresh && env[f] > left && env[f] >= right
        })
        .collect()
}
