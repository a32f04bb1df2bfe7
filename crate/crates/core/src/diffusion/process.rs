//! Closed-form forward noising, the reverse posterior and single reverse steps.

use candle_core::{DType, Device, Shape, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};

/// Gradient of a log-density-ratio score with respect to the noisy sample.
///
/// Implementors capture whatever conditioning the score needs (for the
/// contrastive encoder, the group embedding).
pub trait GuidanceScore {
    fn score_gradient(&self, x_m: &Tensor, m: usize) -> Result<Tensor>;
}

/// Consistency/diversity control: the reverse mean is shifted by
/// `γ · Σ · ∇ log f`.
#[derive(Clone, Copy)]
pub struct GuidanceConfig<'a> {
    pub gamma: f64,
    pub encoder: Option<&'a dyn GuidanceScore>,
}

impl<'a> GuidanceConfig<'a> {
    pub fn none() -> Self {
        GuidanceConfig {
            gamma: 0.0,
            encoder: None,
        }
    }

    pub fn new(gamma: f64, encoder: Option<&'a dyn GuidanceScore>) -> Result<Self> {
        let g = GuidanceConfig { gamma, encoder };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma != 0.0 && self.encoder.is_none() {
            return Err(Error::MissingEncoder(self.gamma));
        }
        Ok(())
    }

    /// `None` when guidance is a no-op, otherwise `γ·∇ log f(x_m)`.
    pub fn scaled_gradient(&self, x_m: &Tensor, m: usize) -> Result<Option<Tensor>> {
        self.validate()?;
        match self.encoder {
            Some(enc) if self.gamma != 0.0 => {
                Ok(Some((enc.score_gradient(x_m, m)? * self.gamma)?))
            }
            _ => Ok(None),
        }
    }
}

/// Standard-normal tensor drawn from a host rng stream.
pub fn randn<R: Rng + ?Sized>(shape: impl Into<Shape>, dtype: DType, device: &Device, rng: &mut R) -> Result<Tensor> {
    let shape = shape.into();
    let values: Vec<f64> = (0..shape.elem_count()).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(values, shape, device)?.to_dtype(dtype)?)
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// `x_m = √ᾱ_m·x₀ + √(1−ᾱ_m)·ε`, valid for `m ∈ [0, M]`.
pub fn q_sample(x0: &Tensor, m: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    same_shape(x0, eps, "q_sample")?;
    if m > sched.steps() {
        return Err(Error::BadStep {
            m,
            lo: 0,
            hi: sched.steps(),
        });
    }
    let ab = sched.alpha_bar(m);
    Ok(((x0 * ab.sqrt())? + (eps * (1.0 - ab).sqrt())?)?)
}

/// Posterior mean `μ̃` and variance `β̃` of `q(x_{m−1} | x_m, x₀)`.
pub fn posterior_mean_variance(x0: &Tensor, x_m: &Tensor, m: usize, sched: &NoiseSchedule) -> Result<(Tensor, f64)> {
    same_shape(x0, x_m, "posterior")?;
    let (c0, ct, var) = sched.posterior_coefficients(m)?;
    Ok((((x0 * c0)? + (x_m * ct)?)?, var))
}

/// Ancestral step from the x₀-prediction: sample `N(μ̂, β̃I)` with the
/// guidance shift applied to the mean. At `m = 1` the mean is returned.
pub fn reverse_step_ddpm<R: Rng + ?Sized>(
    x_m: &Tensor,
    x0_hat: &Tensor,
    m: usize,
    sched: &NoiseSchedule,
    guidance: &GuidanceConfig<'_>,
    rng: &mut R,
) -> Result<Tensor> {
    let (mean, var) = posterior_mean_variance(x0_hat, x_m, m, sched)?;
    let mean = match guidance.scaled_gradient(x_m, m)? {
        Some(g) => (mean + (g * var)?)?,
        None => mean,
    };
    if m == 1 {
        return Ok(mean);
    }
    let noise = randn(x_m.shape().clone(), x_m.dtype(), x_m.device(), rng)?;
    Ok((mean + (noise * var.sqrt())?)?)
}

/// Deterministic (η = 0) implicit step from `m` to `m_prev`.
pub fn reverse_step_ddim(x_m: &Tensor, x0_hat: &Tensor, m: usize, m_prev: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    same_shape(x0_hat, x_m, "ddim step")?;
    if m > sched.steps() || m_prev > m {
        return Err(Error::BadStepPair { m, m_prev });
    }
    if m_prev == m {
        return Ok(x_m.clone());
    }
    let ab = sched.alpha_bar(m);
    let ab_prev = sched.alpha_bar(m_prev);
    let eps_hat = ((x_m - (x0_hat * ab.sqrt())?)? * (1.0 / (1.0 - ab).sqrt()))?;
    Ok(((x0_hat * ab_prev.sqrt())? + (eps_hat * (1.0 - ab_prev).sqrt())?)?)
}

/// DDIM counterpart of the guided mean shift: moving the one-step posterior
/// mean by `γβ̃∇` is the same as moving x₀ by `γ(1−ᾱ_{m−1})/√ᾱ_{m−1}·∇`.
pub fn guided_x0_for_ddim(
    x_m: &Tensor,
    x0_hat: &Tensor,
    m: usize,
    sched: &NoiseSchedule,
    guidance: &GuidanceConfig<'_>,
) -> Result<Tensor> {
    match guidance.scaled_gradient(x_m, m)? {
        Some(g) => {
            sched.check_step(m)?;
            let ab_prev = sched.alpha_bar(m - 1);
            Ok((x0_hat + (g * ((1.0 - ab_prev) / ab_prev.sqrt()))?)?)
        }
        None => Ok(x0_hat.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::COSINE_OFFSET;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::cosine(100, COSINE_OFFSET).unwrap()
    }

    fn rand_t(seed: u64, shape: (usize, usize, usize)) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        randn(shape, DType::F64, &Device::Cpu, &mut rng).unwrap()
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f64>().unwrap()
    }

    struct ConstantGradient;
    impl GuidanceScore for ConstantGradient {
        fn score_gradient(&self, x_m: &Tensor, _m: usize) -> Result<Tensor> {
            Ok(x_m.ones_like()?)
        }
    }

    #[test]
    fn q_sample_special_cases() {
        let s = sched();
        let x0 = rand_t(1, (2, 4, 5));
        let zero = x0.zeros_like().unwrap();
        let xm = q_sample(&x0, 30, &zero, &s).unwrap();
        assert!(max_abs_diff(&xm, &(&x0 * s.alpha_bar(30).sqrt()).unwrap()) < 1e-15);
        let eps = rand_t(2, (2, 4, 5));
        assert_eq!(max_abs_diff(&q_sample(&x0, 0, &eps, &s).unwrap(), &x0), 0.0);
        let bad = rand_t(2, (2, 4, 6));
        assert!(matches!(q_sample(&x0, 3, &bad, &s), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn q_sample_variance_monte_carlo() {
        let s = sched();
        let n = 10_000;
        let x0 = Tensor::zeros((n,), DType::F64, &Device::Cpu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for m in [5, 40, 90] {
            let eps = randn((n,), DType::F64, &Device::Cpu, &mut rng).unwrap();
            let v: Vec<f64> = q_sample(&x0, m, &eps, &s).unwrap().to_vec1().unwrap();
            let mean = v.iter().sum::<f64>() / n as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let target = 1.0 - s.alpha_bar(m);
            assert!((var / target - 1.0).abs() < 0.03, "m={m} var={var} target={target}");
        }
    }

    #[test]
    fn posterior_matches_epsilon_parameterization() {
        let s = sched();
        let x0 = rand_t(3, (2, 3, 7));
        let eps = rand_t(4, (2, 3, 7));
        for m in [1, 2, 17, 60, 100] {
            let xm = q_sample(&x0, m, &eps, &s).unwrap();
            let (mean, var) = posterior_mean_variance(&x0, &xm, m, &s).unwrap();
            // ε-form: μ̃ = (x_m − β_m/√(1−ᾱ_m)·ε)/√α_m
            let eps_rec = ((&xm - (&x0 * s.alpha_bar(m).sqrt()).unwrap()).unwrap()
                * (1.0 / (1.0 - s.alpha_bar(m)).sqrt()))
            .unwrap();
            let alt = ((&xm - (eps_rec * (s.beta(m) / (1.0 - s.alpha_bar(m)).sqrt())).unwrap()).unwrap()
                * (1.0 / s.alpha(m).sqrt()))
            .unwrap();
            assert!(max_abs_diff(&mean, &alt) < 1e-6, "m={m}");
            assert!(var >= 0.0 && var <= s.beta(m));
        }
    }

    #[test]
    fn posterior_first_step_and_collinearity() {
        let s = sched();
        let x0 = rand_t(5, (1, 3, 4));
        let eps = rand_t(6, (1, 3, 4));
        let x1 = q_sample(&x0, 1, &eps, &s).unwrap();
        let (mean, var) = posterior_mean_variance(&x0, &x1, 1, &s).unwrap();
        assert!(max_abs_diff(&mean, &x0) < 1e-6);
        assert_eq!(var, 0.0);

        let xm = q_sample(&x0, 40, &x0.zeros_like().unwrap(), &s).unwrap();
        let (mean, _) = posterior_mean_variance(&x0, &xm, 40, &s).unwrap();
        let (c0, ct, _) = s.posterior_coefficients(40).unwrap();
        let scale = c0 + ct * s.alpha_bar(40).sqrt();
        assert!(max_abs_diff(&mean, &(&x0 * scale).unwrap()) < 1e-12);
    }

    #[test]
    fn zero_gamma_is_bitwise_noop() {
        let s = sched();
        let x0 = rand_t(7, (2, 3, 4));
        let xm = rand_t(8, (2, 3, 4));
        let enc = ConstantGradient;
        let with = GuidanceConfig::new(0.0, Some(&enc)).unwrap();
        let a = reverse_step_ddpm(&xm, &x0, 50, &s, &with, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = reverse_step_ddpm(&xm, &x0, 50, &s, &GuidanceConfig::none(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.flatten_all().unwrap().to_vec1::<f64>().unwrap(), b.flatten_all().unwrap().to_vec1::<f64>().unwrap());
    }

    #[test]
    fn constant_gradient_shifts_mean_by_gamma_variance() {
        let s = sched();
        let x0 = rand_t(9, (1, 2, 3));
        let xm = rand_t(10, (1, 2, 3));
        let enc = ConstantGradient;
        let guided = GuidanceConfig::new(2.0, Some(&enc)).unwrap();
        let a = reverse_step_ddpm(&xm, &x0, 20, &s, &guided, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = reverse_step_ddpm(&xm, &x0, 20, &s, &GuidanceConfig::none(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (_, _, var) = s.posterior_coefficients(20).unwrap();
        let d: Vec<f64> = (a - b).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!(d.iter().all(|v| (v - 2.0 * var).abs() < 1e-12));
    }

    #[test]
    fn missing_encoder_rejected() {
        assert!(matches!(GuidanceConfig::new(1.0, None), Err(Error::MissingEncoder(_))));
    }

    #[test]
    fn first_step_is_deterministic_mean() {
        let s = sched();
        let x0 = rand_t(11, (1, 2, 3));
        let xm = rand_t(12, (1, 2, 3));
        let a = reverse_step_ddpm(&xm, &x0, 1, &s, &GuidanceConfig::none(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = reverse_step_ddpm(&xm, &x0, 1, &s, &GuidanceConfig::none(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(max_abs_diff(&a, &b), 0.0);
        let (mean, _) = posterior_mean_variance(&x0, &xm, 1, &s).unwrap();
        assert_eq!(max_abs_diff(&a, &mean), 0.0);
    }

    #[test]
    fn ddim_with_true_x0_lands_on_forward_marginal() {
        let s = sched();
        let x0 = rand_t(13, (2, 3, 5));
        let eps = rand_t(14, (2, 3, 5));
        for m in [1, 10, 55, 100] {
            let xm = q_sample(&x0, m, &eps, &s).unwrap();
            for m_prev in [0, m / 2] {
                let step = reverse_step_ddim(&xm, &x0, m, m_prev, &s).unwrap();
                let expected = q_sample(&x0, m_prev, &eps, &s).unwrap();
                assert!(max_abs_diff(&step, &expected) < 1e-5, "m={m} m_prev={m_prev}");
            }
            assert_eq!(max_abs_diff(&reverse_step_ddim(&xm, &x0, m, m, &s).unwrap(), &xm), 0.0);
        }
        assert!(matches!(
            reverse_step_ddim(&x0, &x0, 3, 5, &s),
            Err(Error::BadStepPair { .. })
        ));
    }
}
