//! Motion container files.
//!
//! JSON form: `{"fps", "n_dancers", "n_frames", "layout": "root3+rot6d24", "data": N×T×147}`.
//! Binary form: magic `GCDM`, u32 version = 1, u32 N, u32 T, u32 D = 147, then
//! N·T·D little-endian f32 values. Readers sniff the magic.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::sequence::GroupSequence;
use super::POSE_DIM;
use crate::error::{Error, Result};

pub const LAYOUT: &str = "root3+rot6d24";
pub const BINARY_MAGIC: &[u8; 4] = b"GCDM";
pub const BINARY_VERSION: u32 = 1;
// The binary header has no fps field.
const BINARY_FPS: u32 = 30;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MotionContainer {
    pub fps: u32,
    pub n_dancers: usize,
    pub n_frames: usize,
    pub layout: String,
    pub data: Vec<Vec<Vec<f64>>>,
}

impl MotionContainer {
    pub fn from_group(g: &GroupSequence) -> Self {
        let data = g
            .dancers
            .iter()
            .map(|d| d.frames.iter().map(|p| p.to_vector().to_vec()).collect())
            .collect();
        MotionContainer {
            fps: g.fps(),
            n_dancers: g.n_dancers(),
            n_frames: g.n_frames(),
            layout: LAYOUT.to_string(),
            data,
        }
    }

    pub fn to_group(&self) -> Result<GroupSequence> {
        if self.layout != LAYOUT {
            return Err(Error::BadShape(format!("unsupported layout `{}`", self.layout)));
        }
        if self.data.len() != self.n_dancers
            || self.data.iter().any(|d| d.len() != self.n_frames)
        {
            return Err(Error::BadShape(
                "data dimensions disagree with the header".into(),
            ));
        }
        let mut arr = Array3::zeros((self.n_dancers, self.n_frames, POSE_DIM));
        for (i, dancer) in self.data.iter().enumerate() {
            for (f, row) in dancer.iter().enumerate() {
                if row.len() != POSE_DIM {
                    return Err(Error::BadShape(format!(
                        "pose row has {} values, expected {POSE_DIM}",
                        row.len()
                    )));
                }
                for (k, v) in row.iter().enumerate() {
                    arr[[i, f, k]] = *v;
                }
            }
        }
        GroupSequence::unpack(&arr, self.fps)
    }
}

pub fn write_json(path: &Path, g: &GroupSequence) -> Result<()> {
    let text = serde_json::to_string(&MotionContainer::from_group(g))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn encode_binary(g: &GroupSequence) -> Vec<u8> {
    let arr = g.pack();
    let (n, t, d) = arr.dim();
    let mut out = Vec::with_capacity(20 + 4 * arr.len());
    out.extend_from_slice(BINARY_MAGIC);
    for v in [BINARY_VERSION, n as u32, t as u32, d as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in arr.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<GroupSequence> {
    let bad = |m: &str| Error::BadShape(format!("binary motion container: {m}"));
    if bytes.len() < 20 || &bytes[..4] != BINARY_MAGIC {
        return Err(bad("missing GCDM header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (version, n, t, d) = (word(0), word(1) as usize, word(2) as usize, word(3) as usize);
    if version != BINARY_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    if d != POSE_DIM {
        return Err(Error::BadShape(format!(
            "trailing dimension is {d}, expected {POSE_DIM}"
        )));
    }
    let payload = &bytes[20..];
    if payload.len() != 4 * n * t * d {
        return Err(bad("payload length disagrees with header"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let arr = Array3::from_shape_vec((n, t, d), values).map_err(|e| bad(&e.to_string()))?;
    GroupSequence::unpack(&arr, BINARY_FPS)
}

pub fn write_binary(path: &Path, g: &GroupSequence) -> Result<()> {
    fs::write(path, encode_binary(g)).map_err(|e| Error::io(path, e))
}

/// Reads either container form.
pub fn read_motion(path: &Path) -> Result<GroupSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        return decode_binary(&bytes);
    }
    let c: MotionContainer = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    c.to_group()
}
