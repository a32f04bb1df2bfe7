//! Differentiable counterparts of the rotation and FK routines, operating on
//! packed pose tensors with trailing dimension 147.

use candle_core::{Tensor, D};

use super::skeleton::Skeleton;
use super::{NUM_JOINTS, POSE_DIM};
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-12;

fn normalize(v: &Tensor) -> candle_core::Result<Tensor> {
    let n = (v.sqr()?.sum_keepdim(D::Minus1)? + NORM_EPS)?.sqrt()?;
    v.broadcast_div(&n)
}

fn cross(a: &Tensor, b: &Tensor) -> candle_core::Result<Tensor> {
    let c = |t: &Tensor, i: usize| t.narrow(D::Minus1, i, 1);
    let (a0, a1, a2) = (c(a, 0)?, c(a, 1)?, c(a, 2)?);
    let (b0, b1, b2) = (c(b, 0)?, c(b, 1)?, c(b, 2)?);
    Tensor::cat(
        &[
            ((&a1 * &b2)? - (&a2 * &b1)?)?,
            ((&a2 * &b0)? - (&a0 * &b2)?)?,
            ((&a0 * &b1)? - (&a1 * &b0)?)?,
        ],
        D::Minus1,
    )
}

/// `(..., 6)` → `(..., 3, 3)` with the Gram-Schmidt columns.
pub fn rot6d_to_matrix_t(r: &Tensor) -> Result<Tensor> {
    let a1 = r.narrow(D::Minus1, 0, 3)?;
    let a2 = r.narrow(D::Minus1, 3, 3)?;
    let b1 = normalize(&a1)?;
    let proj = (&b1 * &a2)?.sum_keepdim(D::Minus1)?;
    let b2 = normalize(&(a2 - b1.broadcast_mul(&proj)?)?)?;
    let b3 = cross(&b1, &b2)?;
    Ok(Tensor::stack(&[b1, b2, b3], D::Minus1)?)
}

/// Packed poses `(..., 147)` → joint positions `(..., 24, 3)`.
pub fn forward_kinematics_t(packed: &Tensor, skeleton: &Skeleton) -> Result<Tensor> {
    let dims = packed.dims().to_vec();
    if dims.last() != Some(&POSE_DIM) {
        return Err(Error::ShapeMismatch(format!(
            "expected trailing dimension {POSE_DIM}, got {dims:?}"
        )));
    }
    let lead: usize = dims[..dims.len() - 1].iter().product();
    let flat = packed.reshape((lead, POSE_DIM))?;
    let root = flat.narrow(1, 0, 3)?.unsqueeze(2)?;
    let rots = rot6d_to_matrix_t(&flat.narrow(1, 3, 6 * NUM_JOINTS)?.reshape((lead, NUM_JOINTS, 6))?)?;
    let offsets: Vec<f64> = skeleton.rest_offsets.iter().flatten().copied().collect();
    let offsets = Tensor::from_vec(offsets, (NUM_JOINTS, 3, 1), packed.device())?.to_dtype(packed.dtype())?;

    let mut global: Vec<Tensor> = Vec::with_capacity(NUM_JOINTS);
    let mut pos: Vec<Tensor> = Vec::with_capacity(NUM_JOINTS);
    global.push(rots.narrow(1, 0, 1)?.squeeze(1)?);
    pos.push(root);
    for j in 1..NUM_JOINTS {
        let p = skeleton.parent_index[j] as usize;
        let off = offsets.narrow(0, j, 1)?.squeeze(0)?;
        let child = (&pos[p] + global[p].broadcast_matmul(&off)?)?;
        let rot = global[p].matmul(&rots.narrow(1, j, 1)?.squeeze(1)?)?;
        pos.push(child);
        global.push(rot);
    }
    let stacked = Tensor::stack(&pos, 1)?.squeeze(3)?;
    let mut out_dims = dims[..dims.len() - 1].to_vec();
    out_dims.extend([NUM_JOINTS, 3]);
    Ok(stacked.reshape(out_dims)?)
}
