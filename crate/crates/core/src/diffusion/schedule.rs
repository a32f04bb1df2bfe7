use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA_CEILING: f64 = 0.999;
pub const COSINE_OFFSET: f64 = 0.008;

/// Per-step noise levels. All arrays are indexed by step `m ∈ [0, M]`, with the
/// convention `ᾱ₀ = 1`, `β₀ = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule: `ᾱ(m) = f(m)/f(0)`, `f(m) = cos²(((m/M + s)/(1 + s))·π/2)`,
    /// with β clipped to at most 0.999.
    pub fn cosine(steps: usize, s: f64) -> Result<Self> {
        if steps < 1 {
            return Err(Error::BadSteps(steps));
        }
        let f = |m: usize| {
            let x = (m as f64 / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let f0 = f(0);
        let mut beta = vec![0.0; steps + 1];
        let mut alpha = vec![1.0; steps + 1];
        let mut alpha_bar = vec![1.0; steps + 1];
        for m in 1..=steps {
            let b = (1.0 - (f(m) / f0) / (f(m - 1) / f0)).clamp(0.0, BETA_CEILING);
            beta[m] = b;
            alpha[m] = 1.0 - b;
            alpha_bar[m] = alpha_bar[m - 1] * alpha[m];
        }
        Ok(NoiseSchedule {
            steps,
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta(&self, m: usize) -> f64 {
        self.beta[m]
    }

    pub fn alpha(&self, m: usize) -> f64 {
        self.alpha[m]
    }

    pub fn alpha_bar(&self, m: usize) -> f64 {
        self.alpha_bar[m]
    }

    pub fn check_step(&self, m: usize) -> Result<()> {
        if m < 1 || m > self.steps {
            return Err(Error::BadStep {
                m,
                lo: 1,
                hi: self.steps,
            });
        }
        Ok(())
    }

    /// `(coef_x0, coef_xm, variance)` of the posterior `q(x_{m−1} | x_m, x₀)`.
    pub fn posterior_coefficients(&self, m: usize) -> Result<(f64, f64, f64)> {
        self.check_step(m)?;
        let ab = self.alpha_bar[m];
        let ab_prev = self.alpha_bar[m - 1];
        let b = self.beta[m];
        let coef_x0 = ab_prev.sqrt() * b / (1.0 - ab);
        let coef_xm = self.alpha[m].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let var = (1.0 - ab_prev) / (1.0 - ab) * b;
        Ok((coef_x0, coef_xm, var))
    }
}
