//! Forward kinematics and derived kinetic quantities.

use nalgebra::{Matrix3, Vector3};

use super::rotation::rot6d_to_matrix;
use super::sequence::{MotionSequence, Pose};
use super::skeleton::Skeleton;
use super::NUM_JOINTS;
use crate::error::{Error, Result};

pub type JointPositions = [Vector3<f64>; NUM_JOINTS];

pub const DEFAULT_CONTACT_HEIGHT: f64 = 0.08;
pub const DEFAULT_CONTACT_SPEED: f64 = 0.15;

/// Global joint positions in meters.
pub fn forward_kinematics(pose: &Pose, skeleton: &Skeleton) -> Result<JointPositions> {
    let mut global_rot = [Matrix3::identity(); NUM_JOINTS];
    let mut pos = [Vector3::zeros(); NUM_JOINTS];
    let [x, y, z] = pose.root_translation;
    pos[0] = Vector3::new(x, y, z);
    global_rot[0] = rot6d_to_matrix(&pose.joint_rotations[0])?;
    for j in 1..NUM_JOINTS {
        let p = skeleton.parent_index[j] as usize;
        let [ox, oy, oz] = skeleton.rest_offsets[j];
        pos[j] = pos[p] + global_rot[p] * Vector3::new(ox, oy, oz);
        global_rot[j] = global_rot[p] * rot6d_to_matrix(&pose.joint_rotations[j])?;
    }
    Ok(pos)
}

pub fn sequence_positions(seq: &MotionSequence, skeleton: &Skeleton) -> Result<Vec<JointPositions>> {
    seq.frames
        .iter()
        .map(|p| forward_kinematics(p, skeleton))
        .collect()
}

/// Per-joint mean squared velocity (m²/s²) over consecutive frames.
pub fn kinetic_features(seq: &MotionSequence, skeleton: &Skeleton) -> Result<[f64; NUM_JOINTS]> {
    if seq.len() < 2 {
        return Err(Error::SequenceTooShort {
            needed: 2,
            got: seq.len(),
        });
    }
    let positions = sequence_positions(seq, skeleton)?;
    Ok(kinetic_features_from_positions(&positions, seq.fps as f64))
}

pub fn kinetic_features_from_positions(positions: &[JointPositions], fps: f64) -> [f64; NUM_JOINTS] {
    let mut out = [0.0; NUM_JOINTS];
    let steps = positions.len().saturating_sub(1);
    if steps == 0 {
        return out;
    }
    for w in positions.windows(2) {
        for j in 0..NUM_JOINTS {
            out[j] += (w[1][j] - w[0][j]).norm_squared();
        }
    }
    let scale = fps * fps / steps as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Sum over joints of joint speed (m/s), central differences in the interior
/// and one-sided at the ends. Length equals the number of frames.
pub fn kinetic_velocity(positions: &[JointPositions], fps: f64) -> Vec<f64> {
    let t = positions.len();
    if t < 2 {
        return vec![0.0; t];
    }
    (0..t)
        .map(|f| {
            let (a, b, span) = match f {
                0 => (0, 1, 1.0),
                _ if f == t - 1 => (t - 2, t - 1, 1.0),
                _ => (f - 1, f + 1, 2.0),
            };
            (0..NUM_JOINTS)
                .map(|j| (positions[b][j] - positions[a][j]).norm() * fps / span)
                .sum()
        })
        .collect()
}

/// Per-frame `[left, right]` ground-contact flags: foot below `height_thresh`
/// (y-up) and slower than `speed_thresh` (m/s).
pub fn detect_foot_contacts(
    positions: &[JointPositions],
    skeleton: &Skeleton,
    fps: f64,
    height_thresh: f64,
    speed_thresh: f64,
) -> Result<Vec<[bool; 2]>> {
    let t = positions.len();
    if t < 2 {
        return Err(Error::SequenceTooShort { needed: 2, got: t });
    }
    let feet = [skeleton.left_foot_index, skeleton.right_foot_index];
    let mut out: Vec<[bool; 2]> = positions
        .windows(2)
        .map(|w| {
            let mut flags = [false; 2];
            for (side, &j) in feet.iter().enumerate() {
                let speed = (w[1][j] - w[0][j]).norm() * fps;
                flags[side] = w[0][j].y < height_thresh && speed < speed_thresh;
            }
            flags
        })
        .collect();
    out.push(out[t - 2]);
    Ok(out)
}
