//! Reconstruction and geometric losses and their weighted sum.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::kinematics::{detect_foot_contacts, DEFAULT_CONTACT_HEIGHT, DEFAULT_CONTACT_SPEED};
use crate::motion::tensor_fk::forward_kinematics_t;
use crate::motion::{Skeleton, NUM_JOINTS};

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_pos: f64,
    pub lambda_vel: f64,
    pub lambda_foot: f64,
    pub lambda_nce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_pos: 1.0,
            lambda_vel: 1.0,
            lambda_foot: 0.005,
            lambda_nce: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_pos, self.lambda_vel, self.lambda_foot, self.lambda_nce];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!("loss weights must be nonnegative: {all:?}")));
        }
        Ok(())
    }
}

/// Loss terms of one training step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub simple: f64,
    pub pos: f64,
    pub vel: f64,
    pub foot: f64,
    pub nce: f64,
}

/// `L_simple + λ_pos·L_pos + λ_vel·L_vel + λ_foot·L_foot + λ_nce·L_nce`.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    c.simple + w.lambda_pos * c.pos + w.lambda_vel * c.vel + w.lambda_foot * c.foot + w.lambda_nce * c.nce
}

fn same_dims(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn simple_loss(x0: &Tensor, x0_hat: &Tensor) -> Result<Tensor> {
    same_dims(x0, x0_hat)?;
    Ok((x0_hat - x0)?.sqr()?.mean_all()?)
}

/// Ground-truth contact flags for (..., T, 147) motion: a (..., T−1, 2)
/// mask over frame transitions, as a tensor of 0/1 values.
pub fn contact_mask(x0: &Tensor, skeleton: &Skeleton, fps: f64) -> Result<Tensor> {
    let dims = x0.dims().to_vec();
    let t = dims[dims.len() - 2];
    let lead: usize = dims[..dims.len() - 2].iter().product();
    let pos = forward_kinematics_t(&x0.detach().to_dtype(DType::F64)?, skeleton)?;
    let flat: Vec<f64> = pos.flatten_all()?.to_vec1()?;
    let mut mask = Vec::with_capacity(lead * (t - 1) * 2);
    for s in 0..lead {
        let frames: Vec<[nalgebra::Vector3<f64>; NUM_JOINTS]> = (0..t)
            .map(|f| {
                std::array::from_fn(|j| {
                    let o = ((s * t + f) * NUM_JOINTS + j) * 3;
                    nalgebra::Vector3::new(flat[o], flat[o + 1], flat[o + 2])
                })
            })
            .collect();
        let flags = detect_foot_contacts(&frames, skeleton, fps, DEFAULT_CONTACT_HEIGHT, DEFAULT_CONTACT_SPEED)?;
        for f in &flags[..t - 1] {
            mask.push(if f[0] { 1.0 } else { 0.0 });
            mask.push(if f[1] { 1.0 } else { 0.0 });
        }
    }
    let mut mdims = dims[..dims.len() - 2].to_vec();
    mdims.extend([t - 1, 2]);
    Ok(Tensor::from_vec(mask, mdims, x0.device())?.to_dtype(x0.dtype())?)
}

/// `(L_pos, L_vel, L_foot)` for motion shaped (..., T, 147).
///
/// Positions come from FK; velocities are frame differences of positions;
/// the foot term averages predicted foot speed over frames where the
/// ground truth is in contact (zero when there are none).
pub fn geometric_losses(x0: &Tensor, x0_hat: &Tensor, skeleton: &Skeleton, fps: f64) -> Result<(Tensor, Tensor, Tensor)> {
    same_dims(x0, x0_hat)?;
    let rank = x0.rank();
    if rank < 2 {
        return Err(Error::ShapeMismatch(format!("motion tensor of rank {rank}")));
    }
    let t = x0.dim(rank - 2)?;
    if t < 2 {
        return Err(Error::SequenceTooShort { needed: 2, got: t });
    }
    let p_true = forward_kinematics_t(x0, skeleton)?;
    let p_pred = forward_kinematics_t(x0_hat, skeleton)?;
    let l_pos = (&p_pred - &p_true)?.sqr()?.mean_all()?;
    // Frame axis sits just before (joint, xyz).
    let frame_axis = p_true.rank() - 3;
    let diff = |p: &Tensor| -> Result<Tensor> {
        Ok((p.narrow(frame_axis, 1, t - 1)? - p.narrow(frame_axis, 0, t - 1)?)?)
    };
    let v_true = diff(&p_true)?;
    let v_pred = diff(&p_pred)?;
    let l_vel = (&v_pred - &v_true)?.sqr()?.mean_all()?;

    let mask = contact_mask(x0, skeleton, fps)?;
    let joint_axis = v_pred.rank() - 2;
    let feet = Tensor::cat(
        &[
            v_pred.narrow(joint_axis, skeleton.left_foot_index, 1)?,
            v_pred.narrow(joint_axis, skeleton.right_foot_index, 1)?,
        ],
        joint_axis,
    )?;
    // Shifted so a motionless foot costs exactly zero while the gradient
    // stays finite there.
    let speed = ((feet.sqr()?.sum(D::Minus1)? + NORM_EPS)?.sqrt()? - NORM_EPS.sqrt())?;
    let count = mask.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    let l_foot = if count > 0.0 {
        ((speed * &mask)?.sum_all()? / count)?
    } else {
        Tensor::zeros((), x0.dtype(), x0.device())?
    };
    Ok((l_pos, l_vel, l_foot))
}
