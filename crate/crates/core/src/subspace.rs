//! Signal-subspace identification by minimum error (HySime).
//!
//! Noise is estimated by regressing every band on all the others; the
//! subspace keeps the eigen-directions of the signal correlation matrix whose
//! projection lowers the mean squared error, i.e. where the signal power
//! exceeds twice the noise power minus the observed power.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::PixelMatrix;
use crate::linalg::{sym_eigen_desc, symmetrize, to_nalgebra};

/// Relative ridge added to the band Gram matrix before inversion, as a
/// fraction of its mean diagonal.
pub const DEFAULT_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct NoiseEstimate {
    /// `p x w` per-pixel noise residuals.
    pub residuals: Array2<f64>,
    /// `w x w` noise correlation matrix.
    pub noise_corr: Array2<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubspaceResult {
    pub d: usize,
    /// `w x d`, orthonormal columns.
    pub basis: Array2<f64>,
    /// MSE change of adding each eigen-direction, in descending-eigenvalue order.
    pub per_direction_cost: Vec<f64>,
    /// Eigenvalues of the PSD-projected signal correlation matrix.
    pub eigenvalues: Vec<f64>,
}

pub fn estimate_noise(matrix: &PixelMatrix) -> Result<NoiseEstimate> {
    estimate_noise_with_ridge(matrix, DEFAULT_RIDGE)
}

pub fn estimate_noise_with_ridge(matrix: &PixelMatrix, ridge: f64) -> Result<NoiseEstimate> {
    let (p, w) = (matrix.p(), matrix.w());
    if p <= w {
        return Err(Error::domain(format!(
            "noise regression needs more pixels than bands (p = {p}, w = {w}); \
             reduce the band count or supply more pixels"
        )));
    }
    if w < 2 {
        return Err(Error::domain("noise regression needs at least two bands"));
    }
    let x = matrix.spectra();
    let gram = x.t().dot(x);
    let tau = ridge * gram.diag().sum() / w as f64;
    let mut m = to_nalgebra(gram.view());
    for i in 0..w {
        m[(i, i)] += tau;
    }
    let inv: DMatrix<f64> = m
        .cholesky()
        .ok_or_else(|| Error::numerical("band Gram matrix is not positive definite"))?
        .inverse();

    // Column i holds the coefficients regressing band i on the others:
    // beta = -inv[-i, i] / inv[i, i], zero on the diagonal.
    let mut coef = Array2::<f64>::zeros((w, w));
    for i in 0..w {
        let pivot = inv[(i, i)];
        for j in 0..w {
            if j != i {
                coef[[j, i]] = -inv[(j, i)] / pivot;
            }
        }
    }
    let residuals = x - &x.dot(&coef);
    let noise_corr = symmetrize(&(residuals.t().dot(&residuals) / p as f64));
    Ok(NoiseEstimate {
        residuals,
        noise_corr,
    })
}

pub fn estimate_dimension(matrix: &PixelMatrix, noise: &NoiseEstimate) -> Result<SubspaceResult> {
    let (p, w) = (matrix.p(), matrix.w());
    if noise.noise_corr.dim() != (w, w) {
        return Err(Error::shape(
            "noise correlation",
            format!("{w}x{w}"),
            format!("{:?}", noise.noise_corr.dim()),
        ));
    }
    let x = matrix.spectra();
    let ry = symmetrize(&(x.t().dot(x) / p as f64));
    let rn = &noise.noise_corr;
    let rx = &ry - rn;
    let (values, vectors) = sym_eigen_desc(&rx);

    let mut cost = Vec::with_capacity(w);
    for i in 0..w {
        let e = vectors.column(i);
        let noise_power = e.dot(&rn.dot(&e));
        let observed_power = e.dot(&ry.dot(&e));
        cost.push(2.0 * noise_power - observed_power);
    }
    let mut chosen: Vec<usize> = (0..w).filter(|&i| cost[i] < 0.0).collect();
    if chosen.is_empty() {
        chosen.push(0);
    }
    let d = chosen.len();
    let mut basis = Array2::zeros((w, d));
    for (dst, &src) in chosen.iter().enumerate() {
        basis.column_mut(dst).assign(&vectors.column(src));
    }
    Ok(SubspaceResult {
        d,
        basis,
        per_direction_cost: cost,
        eigenvalues: values.iter().map(|v| v.max(0.0)).collect(),
    })
}

/// Runs noise estimation then dimension estimation.
pub fn hysime(matrix: &PixelMatrix) -> Result<(NoiseEstimate, SubspaceResult)> {
    let noise = estimate_noise(matrix)?;
    let sub = estimate_dimension(matrix, &noise)?;
    Ok((noise, sub))
}

/// Number of mixture components: `2 d` unless overridden.
pub fn cluster_count(d: usize, k_override: Option<usize>) -> usize {
    k_override.unwrap_or(2 * d.max(1))
}

/// Noise standard deviation per band, `sqrt(diag(Rn))`.
pub fn noise_std(noise: &NoiseEstimate) -> Array1<f64> {
    noise.noise_corr.diag().mapv(f64::sqrt)
}
