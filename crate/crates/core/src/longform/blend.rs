//! Merging the overlap between adjacent chunks.

use ndarray::{Array3, ArrayView3};

use crate::error::{Error, Result};
use crate::motion::rotation::{quaternion_to_rot6d, rot6d_to_quaternion, Rot6d};
use crate::motion::{quaternion_slerp, NUM_JOINTS, POSE_DIM};

/// Weight of the earlier chunk at overlap frame `f` of `len`: 1 → 0.
pub fn fade_weight(f: usize, len: usize) -> f64 {
    if len <= 1 {
        1.0
    } else {
        1.0 - f as f64 / (len - 1) as f64
    }
}

fn check(a: &ArrayView3<'_, f64>, b: &ArrayView3<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("overlap {:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.dim().2 != POSE_DIM {
        return Err(Error::ShapeMismatch(format!("pose width {}, expected {POSE_DIM}", a.dim().2)));
    }
    Ok(())
}

/// Per-frame linear crossfade of two (N, L, D) arrays; used on diffused
/// states where rotation structure does not exist yet.
pub fn crossfade(a: ArrayView3<'_, f64>, b: ArrayView3<'_, f64>) -> Result<Array3<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("overlap {:?} vs {:?}", a.dim(), b.dim())));
    }
    let (_, len, _) = a.dim();
    let mut out = a.to_owned();
    for f in 0..len {
        let w = fade_weight(f, len);
        let mut of = out.slice_mut(ndarray::s![.., f, ..]);
        of *= w;
        of.scaled_add(1.0 - w, &b.slice(ndarray::s![.., f, ..]));
    }
    Ok(out)
}

/// SLERP blend of clean poses: every joint rotation goes through its
/// quaternion, the root is interpolated linearly, both with the earlier
/// chunk's weight falling from 1 to 0 across the overlap. End frames copy
/// their source exactly.
pub fn blend_overlap(a: ArrayView3<'_, f64>, b: ArrayView3<'_, f64>) -> Result<Array3<f64>> {
    check(&a, &b)?;
    let (n, len, _) = a.dim();
    let mut out = Array3::zeros(a.dim());
    for d in 0..n {
        for f in 0..len {
            let w = fade_weight(f, len);
            let ra = a.slice(ndarray::s![d, f, ..]);
            let rb = b.slice(ndarray::s![d, f, ..]);
            let mut row = out.slice_mut(ndarray::s![d, f, ..]);
            if w == 1.0 {
                row.assign(&ra);
                continue;
            }
            if w == 0.0 {
                row.assign(&rb);
                continue;
            }
            for k in 0..3 {
                row[k] = w * ra[k] + (1.0 - w) * rb[k];
            }
            for j in 0..NUM_JOINTS {
                let o = 3 + 6 * j;
                let mut qa: Rot6d = [0.0; 6];
                let mut qb: Rot6d = [0.0; 6];
                for c in 0..6 {
                    qa[c] = ra[o + c];
                    qb[c] = rb[o + c];
                }
                let q = quaternion_slerp(&rot6d_to_quaternion(&qa)?, &rot6d_to_quaternion(&qb)?, 1.0 - w);
                let r = quaternion_to_rot6d(&q);
                for c in 0..6 {
                    row[o + c] = r[c];
                }
            }
        }
    }
    Ok(out)
}
