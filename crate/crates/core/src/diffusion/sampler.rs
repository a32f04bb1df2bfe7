//! Reverse samplers behind a common trait, selected by name at runtime.

use std::collections::BTreeMap;

use candle_core::Tensor;
use rand_chacha::ChaCha8Rng;

use super::process::{guided_x0_for_ddim, reverse_step_ddim, reverse_step_ddpm, GuidanceConfig};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};

pub const DEFAULT_DDIM_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerOptions {
    pub ddim_steps: usize,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            ddim_steps: DEFAULT_DDIM_STEPS,
        }
    }
}

pub trait ReverseSampler: Send + Sync {
    fn name(&self) -> &'static str;

    /// Visited steps in descending order. Each step `m` moves to the next
    /// entry, and the last one moves to 0.
    fn timesteps(&self, sched: &NoiseSchedule) -> Result<Vec<usize>>;

    #[allow(clippy::too_many_arguments)]
    fn step(
        &self,
        x_m: &Tensor,
        x0_hat: &Tensor,
        m: usize,
        m_prev: usize,
        sched: &NoiseSchedule,
        guidance: &GuidanceConfig<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor>;
}

pub struct Ddpm;

impl ReverseSampler for Ddpm {
    fn name(&self) -> &'static str {
        "ddpm"
    }

    fn timesteps(&self, sched: &NoiseSchedule) -> Result<Vec<usize>> {
        Ok((1..=sched.steps()).rev().collect())
    }

    fn step(
        &self,
        x_m: &Tensor,
        x0_hat: &Tensor,
        m: usize,
        m_prev: usize,
        sched: &NoiseSchedule,
        guidance: &GuidanceConfig<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        if m_prev + 1 != m {
            return Err(Error::BadStepPair { m, m_prev });
        }
        reverse_step_ddpm(x_m, x0_hat, m, sched, guidance, rng)
    }
}

pub struct Ddim {
    pub steps: usize,
}

/// `n` points spread uniformly over `[1, M]`, descending, duplicates dropped.
pub fn ddim_timesteps(total: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || total == 0 {
        return Err(Error::BadSteps(n));
    }
    if n == 1 {
        return Ok(vec![total]);
    }
    let mut grid: Vec<usize> = (0..n)
        .map(|i| (1.0 + i as f64 * (total - 1) as f64 / (n - 1) as f64).round() as usize)
        .collect();
    grid.dedup();
    grid.reverse();
    Ok(grid)
}

impl ReverseSampler for Ddim {
    fn name(&self) -> &'static str {
        "ddim"
    }

    fn timesteps(&self, sched: &NoiseSchedule) -> Result<Vec<usize>> {
        ddim_timesteps(sched.steps(), self.steps)
    }

    fn step(
        &self,
        x_m: &Tensor,
        x0_hat: &Tensor,
        m: usize,
        m_prev: usize,
        sched: &NoiseSchedule,
        guidance: &GuidanceConfig<'_>,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let x0 = guided_x0_for_ddim(x_m, x0_hat, m, sched, guidance)?;
        reverse_step_ddim(x_m, &x0, m, m_prev, sched)
    }
}

type Factory = fn(&SamplerOptions) -> Result<Box<dyn ReverseSampler>>;

pub struct SamplerRegistry {
    factories: BTreeMap<&'static str, Factory>,
}

impl SamplerRegistry {
    pub fn empty() -> Self {
        SamplerRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("ddpm", |_| Ok(Box::new(Ddpm)));
        r.register("ddim", |o| {
            if o.ddim_steps == 0 {
                return Err(Error::BadSteps(0));
            }
            Ok(Box::new(Ddim { steps: o.ddim_steps }))
        });
        r
    }

    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn build(&self, name: &str, opts: &SamplerOptions) -> Result<Box<dyn ReverseSampler>> {
        let f = self.factories.get(name).ok_or_else(|| Error::UnknownStrategy {
            kind: "sampler",
            name: name.to_string(),
        })?;
        f(opts)
    }
}
