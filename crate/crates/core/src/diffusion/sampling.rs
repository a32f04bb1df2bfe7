//! The reverse chain: predict x₀ at every visited step, apply the sampler's
//! reverse step, optionally post-process the new state.

use candle_core::Tensor;
use rand_chacha::ChaCha8Rng;

use super::process::GuidanceConfig;
use super::sampler::ReverseSampler;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};

/// Anything that maps a noisy sample at step `m` to a clean estimate.
pub trait X0Predictor {
    fn predict_x0(&self, x_m: &Tensor, m: usize) -> Result<Tensor>;
}

/// What the per-step hook sees after a reverse step.
pub struct ChainStep<'a> {
    pub index: usize,
    pub m: usize,
    pub m_prev: usize,
    pub x0_hat: &'a Tensor,
}

/// Walks `steps` (descending, each `m` moving to the next entry and the last
/// to 0). `hook` may rewrite every new state; long-form blending lives there.
#[allow(clippy::too_many_arguments)]
pub fn run_chain_over<F>(
    predictor: &dyn X0Predictor,
    sampler: &dyn ReverseSampler,
    sched: &NoiseSchedule,
    steps: &[usize],
    x_start: Tensor,
    guidance: &GuidanceConfig<'_>,
    rng: &mut ChaCha8Rng,
    mut hook: F,
) -> Result<Tensor>
where
    F: FnMut(&ChainStep<'_>, Tensor) -> Result<Tensor>,
{
    guidance.validate()?;
    if steps.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidArgument("chain steps must be strictly descending".into()));
    }
    let mut x = x_start;
    for (index, &m) in steps.iter().enumerate() {
        sched.check_step(m)?;
        let m_prev = steps.get(index + 1).copied().unwrap_or(0);
        let x0_hat = predictor.predict_x0(&x, m)?;
        let next = sampler.step(&x, &x0_hat, m, m_prev, sched, guidance, rng)?;
        let info = ChainStep {
            index,
            m,
            m_prev,
            x0_hat: &x0_hat,
        };
        x = hook(&info, next)?;
    }
    Ok(x)
}

pub fn run_reverse_chain(
    predictor: &dyn X0Predictor,
    sampler: &dyn ReverseSampler,
    sched: &NoiseSchedule,
    x_start: Tensor,
    guidance: &GuidanceConfig<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let steps = sampler.timesteps(sched)?;
    run_chain_over(predictor, sampler, sched, &steps, x_start, guidance, rng, |_, x| Ok(x))
}
