//! InfoNCE over one positive and K negative scores, and the scoring of
//! one-step denoised anchor/mixed groups used to train the encoder.

use candle_core::{Tensor, D};

use super::encoder::ContrastiveEncoder;
use crate::diffusion::{q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::Denoiser;

/// `−log(e^{g⁺} / (e^{g⁺} + Σ_j e^{g_j}))` evaluated as
/// `logsumexp(g⁺, g_1..g_K) − g⁺`. `pos`: shape (1,), `neg`: shape (K,).
pub fn nce_loss(pos: &Tensor, neg: &Tensor) -> Result<Tensor> {
    if neg.elem_count() == 0 {
        return Err(Error::InvalidArgument("InfoNCE needs at least one negative".into()));
    }
    let pos = pos.flatten_all()?;
    let all = Tensor::cat(&[&pos, &neg.flatten_all()?], 0)?;
    let max = all.max_keepdim(D::Minus1)?.detach();
    let lse = (all.broadcast_sub(&max)?.exp()?.sum_keepdim(D::Minus1)?.log()? + max)?;
    Ok((lse - pos)?.squeeze(0)?)
}

/// Host-side reference value of the loss.
pub fn nce_loss_value(pos: f64, neg: &[f64]) -> f64 {
    let max = neg.iter().copied().fold(pos, f64::max);
    let sum: f64 = std::iter::once(pos).chain(neg.iter().copied()).map(|g| (g - max).exp()).sum();
    max + sum.ln() - pos
}

pub struct ContrastiveScores {
    pub pos: Tensor,
    pub neg: Tensor,
    /// Denoiser outputs for the stacked (anchor, mixed...) batch.
    pub x0_hat: Tensor,
    pub x_m: Tensor,
}

/// Noises anchor and mixed groups to step `m` with the shared draw `eps`,
/// denoises them under the anchor's music, forms the posterior mean `μ̃` and
/// scores it at step `m − 1`.
///
/// `anchor`: (N, T, 147); `mixed`: (K, N, T, 147); `tokens`: (1, T, d);
/// `w`: (1, d); `eps`: (N, T, 147).
#[allow(clippy::too_many_arguments)]
pub fn contrastive_training_scores(
    denoiser: &Denoiser,
    encoder: &ContrastiveEncoder,
    anchor: &Tensor,
    mixed: &Tensor,
    tokens: &Tensor,
    w: &Tensor,
    m: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<ContrastiveScores> {
    let (k, n, t, p) = mixed.dims4()?;
    if anchor.dims() != [n, t, p] || eps.dims() != [n, t, p] {
        return Err(Error::ShapeMismatch(format!(
            "anchor {:?}, eps {:?}, mixed {:?}",
            anchor.dims(),
            eps.dims(),
            mixed.dims()
        )));
    }
    sched.check_step(m)?;
    let b = k + 1;
    let x0 = Tensor::cat(&[&anchor.unsqueeze(0)?, mixed], 0)?;
    let eps_b = eps.unsqueeze(0)?.broadcast_as((b, n, t, p))?;
    let x_m = q_sample(&x0, m, &eps_b.contiguous()?, sched)?;
    let d = tokens.dim(2)?;
    let tokens_b = tokens.broadcast_as((b, t, d))?.contiguous()?;
    let w_b = w.broadcast_as((b, d))?.contiguous()?;
    let x0_hat = denoiser.forward(&x_m, &vec![m; b], &tokens_b, &w_b)?;
    let (c0, ct, _) = sched.posterior_coefficients(m)?;
    let mu = ((&x0_hat * c0)? + (&x_m * ct)?)?;
    let scores = encoder.score(&mu, &w_b, &vec![m - 1; b])?;
    Ok(ContrastiveScores {
        pos: scores.narrow(0, 0, 1)?,
        neg: scores.narrow(0, 1, k)?,
        x0_hat,
        x_m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use proptest::prelude::*;

    fn t1(v: &[f64]) -> Tensor {
        Tensor::new(v, &Device::Cpu).unwrap()
    }

    fn loss(pos: f64, neg: &[f64]) -> f64 {
        nce_loss(&t1(&[pos]), &t1(neg)).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn uniform_scores() {
        assert!((loss(0.0, &[0.0; 10]) - 11f64.ln()).abs() < 1e-12);
        assert!((loss(0.0, &[0.0]) - 2f64.ln()).abs() < 1e-12);
        assert!((loss(3.5, &[3.5; 10]) - 2.3979).abs() < 1e-4);
    }

    #[test]
    fn large_positive_margin_drives_loss_to_zero() {
        assert!(loss(200.0, &[0.0, -1.0, 5.0]) < 1e-12);
        assert!(loss(1e4, &[0.0]).is_finite());
        assert!(nce_loss(&t1(&[0.0]), &Tensor::zeros((0,), DType::F64, &Device::Cpu).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn nonnegative_matches_reference_and_decreasing(
            pos in -10.0f64..10.0,
            neg in proptest::collection::vec(-10.0f64..10.0, 1..12),
            bump in 0.01f64..5.0,
        ) {
            let l = loss(pos, &neg);
            prop_assert!(l >= 0.0);
            prop_assert!((l - nce_loss_value(pos, &neg)).abs() < 1e-9);
            prop_assert!(loss(pos + bump, &neg) < l);
        }
    }
}
