use ndarray::{Array3, ArrayView2};

use super::rotation::{orthonormalize_rot6d, rot6d_to_matrix, Rot6d};
use super::{NUM_JOINTS, POSE_DIM};
use crate::error::{Error, Result};

pub const DEFAULT_FPS: u32 = 30;

/// One frame of one dancer: root translation (meters) plus per-joint 6D rotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub root_translation: [f64; 3],
    pub joint_rotations: [Rot6d; NUM_JOINTS],
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            root_translation: [0.0; 3],
            joint_rotations: [[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]; NUM_JOINTS],
        }
    }

    /// Layout: `[root(3), joint0(6), …, joint23(6)]`.
    pub fn to_vector(&self) -> [f64; POSE_DIM] {
        let mut out = [0.0; POSE_DIM];
        out[..3].copy_from_slice(&self.root_translation);
        for (j, r) in self.joint_rotations.iter().enumerate() {
            out[3 + 6 * j..9 + 6 * j].copy_from_slice(r);
        }
        out
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != POSE_DIM {
            return Err(Error::BadShape(format!(
                "pose vector has length {}, expected {POSE_DIM}",
                v.len()
            )));
        }
        let mut pose = Pose::identity();
        pose.root_translation.copy_from_slice(&v[..3]);
        for j in 0..NUM_JOINTS {
            pose.joint_rotations[j].copy_from_slice(&v[3 + 6 * j..9 + 6 * j]);
        }
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.joint_rotations {
            rot6d_to_matrix(r)?;
        }
        if self.root_translation.iter().any(|x| !x.is_finite()) {
            return Err(Error::BadShape("non-finite root translation".into()));
        }
        Ok(())
    }

    /// Replaces every 6D block by its Gram-Schmidt projection.
    pub fn orthonormalized(&self) -> Result<Self> {
        let mut out = self.clone();
        for r in out.joint_rotations.iter_mut() {
            *r = orthonormalize_rot6d(r)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub frames: Vec<Pose>,
    pub fps: u32,
}

impl MotionSequence {
    pub fn new(frames: Vec<Pose>, fps: u32) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::SequenceTooShort { needed: 1, got: 0 });
        }
        if fps == 0 {
            return Err(Error::InvalidArgument("fps must be positive".into()));
        }
        Ok(MotionSequence { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn from_rows(rows: ArrayView2<'_, f64>, fps: u32) -> Result<Self> {
        let frames = rows
            .outer_iter()
            .map(|row| match row.as_slice() {
                Some(s) => Pose::from_slice(s),
                None => Pose::from_slice(&row.to_vec()),
            })
            .collect::<Result<Vec<_>>>()?;
        MotionSequence::new(frames, fps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSequence {
    pub dancers: Vec<MotionSequence>,
}

impl GroupSequence {
    pub fn new(dancers: Vec<MotionSequence>) -> Result<Self> {
        let first = dancers
            .first()
            .ok_or_else(|| Error::BadShape("a group needs at least one dancer".into()))?;
        let (t, fps) = (first.len(), first.fps);
        if dancers.iter().any(|d| d.len() != t || d.fps != fps) {
            return Err(Error::BadShape(
                "all dancers must share frame count and fps".into(),
            ));
        }
        Ok(GroupSequence { dancers })
    }

    pub fn n_dancers(&self) -> usize {
        self.dancers.len()
    }

    pub fn n_frames(&self) -> usize {
        self.dancers[0].len()
    }

    pub fn fps(&self) -> u32 {
        self.dancers[0].fps
    }

    /// N × T × 147 array.
    pub fn pack(&self) -> Array3<f64> {
        let (n, t) = (self.n_dancers(), self.n_frames());
        let mut out = Array3::zeros((n, t, POSE_DIM));
        for (i, dancer) in self.dancers.iter().enumerate() {
            for (f, pose) in dancer.frames.iter().enumerate() {
                for (k, v) in pose.to_vector().into_iter().enumerate() {
                    out[[i, f, k]] = v;
                }
            }
        }
        out
    }

    pub fn unpack(arr: &Array3<f64>, fps: u32) -> Result<Self> {
        let (n, _, d) = arr.dim();
        if d != POSE_DIM {
            return Err(Error::BadShape(format!(
                "trailing dimension is {d}, expected {POSE_DIM}"
            )));
        }
        if n == 0 {
            return Err(Error::BadShape("array has zero dancers".into()));
        }
        let dancers = arr
            .outer_iter()
            .map(|rows| MotionSequence::from_rows(rows, fps))
            .collect::<Result<Vec<_>>>()?;
        GroupSequence::new(dancers)
    }

    pub fn orthonormalized(&self) -> Result<Self> {
        let dancers = self
            .dancers
            .iter()
            .map(|d| {
                let frames = d
                    .frames
                    .iter()
                    .map(Pose::orthonormalized)
                    .collect::<Result<Vec<_>>>()?;
                MotionSequence::new(frames, d.fps)
            })
            .collect::<Result<Vec<_>>>()?;
        GroupSequence::new(dancers)
    }

    /// Frames `[start, start + len)`; frames past the end repeat the last frame.
    pub fn crop(&self, start: usize, len: usize) -> Result<Self> {
        let dancers = self
            .dancers
            .iter()
            .map(|d| {
                let last = d.len() - 1;
                let frames = (start..start + len)
                    .map(|f| d.frames[f.min(last)].clone())
                    .collect();
                MotionSequence::new(frames, d.fps)
            })
            .collect::<Result<Vec<_>>>()?;
        GroupSequence::new(dancers)
    }
}
