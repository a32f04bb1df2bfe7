//! Per-dancer metrics: beat alignment, diversity, physical foot contact and
//! the motion-change curve.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::motion::kinematics::{kinetic_features_from_positions, kinetic_velocity, sequence_positions};
use crate::motion::{kinetic_features, GroupSequence, MotionSequence, Skeleton, NUM_JOINTS};

pub const DEFAULT_BEAT_SIGMA: f64 = 3.0;
pub const SMOOTHING_WINDOW: usize = 5;
const PFC_EPS: f64 = 1e-8;
/// COM accelerations below this (m/s²) are rounding noise.
const ACC_FLOOR: f64 = 1e-6;
/// Relative drop a minimum needs over its left neighbor, so rounding noise
/// on a flat curve does not register as beats.
const MINIMUM_TOL: f64 = 1e-9;

/// Centered moving average; windows are truncated at the ends.
pub fn smooth(series: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let t = series.len();
    (0..t)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(t);
            series[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Interior frames strictly below their left neighbor and no higher than
/// their right one.
pub fn local_minima(series: &[f64]) -> Vec<usize> {
    let scale = series.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = MINIMUM_TOL * scale;
    (1..series.len().saturating_sub(1))
        .filter(|&i| series[i] < series[i - 1] - tol && series[i] <= series[i + 1] + tol)
        .collect()
}

/// Motion beats: local minima of the smoothed kinetic velocity.
pub fn motion_beats(motion: &MotionSequence, skeleton: &Skeleton) -> Result<Vec<usize>> {
    let positions = sequence_positions(motion, skeleton)?;
    let v = kinetic_velocity(&positions, motion.fps as f64);
    Ok(local_minima(&smooth(&v, SMOOTHING_WINDOW)))
}

/// Mean Gaussian kernel between each motion beat and its nearest music beat.
pub fn beat_alignment_score(motion_beats: &[usize], music_beats: &[usize], sigma: f64) -> Result<f64> {
    if music_beats.is_empty() {
        return Err(Error::NoBeats);
    }
    if motion_beats.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = motion_beats
        .iter()
        .map(|&b| {
            let d = music_beats
                .iter()
                .map(|&m| (b as f64 - m as f64).abs())
                .fold(f64::INFINITY, f64::min);
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / motion_beats.len() as f64)
}

pub fn mmc_beat_alignment(motion: &MotionSequence, beat_frames: &[usize], sigma_frames: f64) -> Result<f64> {
    if motion.len() < 5 {
        return Err(Error::SequenceTooShort { needed: 5, got: motion.len() });
    }
    if beat_frames.is_empty() {
        return Err(Error::NoBeats);
    }
    beat_alignment_score(&motion_beats(motion, Skeleton::smpl())?, beat_frames, sigma_frames)
}

/// Mean pairwise Euclidean distance between feature vectors.
pub fn mean_pairwise_distance(features: &[Vec<f64>]) -> Result<f64> {
    let n = features.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += features[i].iter().zip(&features[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        }
    }
    Ok(sum / (n * (n - 1) / 2) as f64)
}

pub fn generation_diversity(motions: &[&MotionSequence]) -> Result<f64> {
    if motions.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: motions.len() });
    }
    let feats = motions
        .iter()
        .map(|m| Ok(kinetic_features(m, Skeleton::smpl())?.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    mean_pairwise_distance(&feats)
}

/// Physical foot contact: COM acceleration gated by both feet moving,
/// normalized by the peak acceleration.
pub fn pfc(motion: &MotionSequence, skeleton: &Skeleton) -> Result<f64> {
    let t = motion.len();
    if t < 3 {
        return Err(Error::SequenceTooShort { needed: 3, got: t });
    }
    let fps = motion.fps as f64;
    let pos = sequence_positions(motion, skeleton)?;
    let com: Vec<Vector3<f64>> = pos
        .iter()
        .map(|p| p.iter().fold(Vector3::zeros(), |acc, v| acc + v) / NUM_JOINTS as f64)
        .collect();
    let (lf, rf) = (skeleton.left_foot_index, skeleton.right_foot_index);
    let mut terms = Vec::with_capacity(t - 2);
    let mut max_acc: f64 = 0.0;
    for f in 1..t - 1 {
        let acc = ((com[f + 1] - com[f] * 2.0 + com[f - 1]) * fps * fps).norm();
        let acc = if acc < ACC_FLOOR { 0.0 } else { acc };
        let vl = (pos[f + 1][lf] - pos[f - 1][lf]).norm() * fps / 2.0;
        let vr = (pos[f + 1][rf] - pos[f - 1][rf]).norm() * fps / 2.0;
        max_acc = max_acc.max(acc);
        terms.push(acc * vl * vr);
    }
    Ok(terms.iter().sum::<f64>() / (terms.len() as f64 * max_acc + PFC_EPS))
}

/// Per-frame magnitude of change in windowed kinetic features, averaged
/// over dancers. Length is `T − window_frames`.
pub fn motion_change_curve(group: &GroupSequence, window_frames: usize) -> Result<Vec<f64>> {
    let t = group.n_frames();
    if window_frames < 2 || t < window_frames + 1 {
        return Err(Error::SequenceTooShort {
            needed: window_frames.max(2) + 1,
            got: t,
        });
    }
    let fps = group.fps() as f64;
    let len = t - window_frames;
    let mut curve = vec![0.0; len];
    for dancer in &group.dancers {
        let pos = sequence_positions(dancer, Skeleton::smpl())?;
        let kf: Vec<[f64; NUM_JOINTS]> = (0..=len)
            .map(|s| kinetic_features_from_positions(&pos[s..s + window_frames], fps))
            .collect();
        for (f, c) in curve.iter_mut().enumerate() {
            *c += kf[f + 1].iter().zip(&kf[f]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        }
    }
    let n = group.n_dancers() as f64;
    curve.iter_mut().for_each(|c| *c /= n);
    Ok(curve)
}
