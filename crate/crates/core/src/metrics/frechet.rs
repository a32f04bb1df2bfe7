//! Fréchet distance between Gaussian fits of two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below `−NEG_TOL · max(1, λ_max)` mean the input was not
/// positive semidefinite; smaller negatives are rounding and clip to zero.
const NEG_TOL: f64 = 1e-8;

/// Sample mean and unbiased covariance of row vectors.
pub fn mean_and_covariance(samples: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::ShapeMismatch("feature vectors differ in length".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, j| samples[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    Ok((mean, cov))
}

fn clipped_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite covariance".into()));
    }
    let mut eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.iter().copied().fold(1.0f64, f64::max);
    for l in eig.eigenvalues.iter_mut() {
        if *l < -NEG_TOL * top {
            return Err(Error::NumericalFailure(format!("matrix has eigenvalue {l:e}")));
        }
        *l = l.max(0.0);
    }
    Ok(eig)
}

/// Square root of a symmetric positive semidefinite matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = clipped_eigen(m)?;
    let roots = eig.eigenvalues.map(f64::sqrt);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `Tr((Σ₁Σ₂)^{1/2})` as the trace of the square root of the symmetric
/// matrix `Σ₁^{1/2} Σ₂ Σ₁^{1/2}`, which has the same spectrum.
pub fn trace_sqrt_product(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    let r1 = psd_sqrt(s1)?;
    let inner = &r1 * s2 * &r1;
    Ok(clipped_eigen(&inner)?.eigenvalues.iter().map(|l| l.sqrt()).sum())
}

pub fn frechet_from_stats(mu1: &DVector<f64>, s1: &DMatrix<f64>, mu2: &DVector<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    if mu1.len() != mu2.len() || s1.shape() != s2.shape() {
        return Err(Error::ShapeMismatch(format!("feature dims {} vs {}", mu1.len(), mu2.len())));
    }
    let diff = (mu1 - mu2).norm_squared();
    let value = diff + s1.trace() + s2.trace() - 2.0 * trace_sqrt_product(s1, s2)?;
    if !value.is_finite() {
        return Err(Error::NumericalFailure("non-finite Frechet distance".into()));
    }
    Ok(value.max(0.0))
}

/// `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})`.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (mu1, s1) = mean_and_covariance(a)?;
    let (mu2, s2) = mean_and_covariance(b)?;
    frechet_from_stats(&mu1, &s1, &mu2, &s2)
}
