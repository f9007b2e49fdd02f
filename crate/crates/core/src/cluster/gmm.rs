//! Full-covariance Gaussian mixture fitted by expectation-maximization.
//!
//! Covariances are regularized with a fixed inverse-Wishart-style penalty
//! `-alpha/2 * tr(Sigma_q^-1)` per component, whose M-step is
//! `Sigma_q = S_q + (alpha / N_q) I`. With `alpha = reg * avg_diag * p / k`
//! the shift is exactly `reg * avg_diag` for a component of average size,
//! and the penalized log-likelihood is monotone under EM.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::{assign, kmeans_plus_plus};
use crate::error::{Error, Result};
use crate::linalg::column_means;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmConfig {
    pub max_iter: usize,
    /// Stop when the objective gain falls below `tol * |objective|`.
    pub tol: f64,
    /// Covariance shift relative to the mean per-dimension data variance.
    pub reg: f64,
    /// Component weight below which a component counts as collapsed.
    pub collapse_weight: f64,
    pub max_reseeds: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-5,
            reg: 1e-6,
            collapse_weight: 1e-8,
            max_reseeds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `k x d`.
    pub means: Array2<f64>,
    pub covariances: Vec<Array2<f64>>,
    /// Penalized log-likelihood before every M-step since the last reseed.
    pub log_likelihood_trace: Vec<f64>,
    /// Plain data log-likelihood of the returned parameters.
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub reseeds: usize,
    /// Penalty strength `alpha`.
    pub penalty: f64,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// `p x k` posterior component probabilities; rows sum to 1.
    pub fn responsibilities(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let comps = factor_all(&self.means, &self.covariances)?;
        Ok(e_step(z, &self.weights, &comps).0)
    }

    /// Hard labels: argmax responsibility, lowest index on ties.
    pub fn assign(&self, z: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        if z.ncols() != self.dim() {
            return Err(Error::shape("embedding width", self.dim(), z.ncols()));
        }
        let comps = factor_all(&self.means, &self.covariances)?;
        let log_w: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        Ok(z
            .rows()
            .into_iter()
            .map(|row| {
                let x = DVector::from_iterator(row.len(), row.iter().copied());
                let mut best = (f64::NEG_INFINITY, 0);
                for (q, c) in comps.iter().enumerate() {
                    let v = log_w[q] + c.log_density(&x);
                    if v > best.0 {
                        best = (v, q);
                    }
                }
                best.1
            })
            .collect())
    }
}

/// Mean, Cholesky factor and log-normalizer of one component.
struct Component {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl Component {
    fn new(mean: DVector<f64>, cov: &Array2<f64>) -> Result<Self> {
        let d = mean.len();
        let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (cov[[i, j]] + cov[[j, i]]));
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::numerical("component covariance is not positive definite"))?;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            mean,
            chol,
            log_norm: -0.5 * (d as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let y = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("non-singular factor");
        self.log_norm - 0.5 * y.norm_squared()
    }

    fn inverse_trace(&self) -> f64 {
        self.chol.inverse().trace()
    }
}

fn factor_all(means: &Array2<f64>, covs: &[Array2<f64>]) -> Result<Vec<Component>> {
    means
        .rows()
        .into_iter()
        .zip(covs)
        .map(|(m, c)| Component::new(DVector::from_iterator(m.len(), m.iter().copied()), c))
        .collect()
}

/// Responsibilities and the data log-likelihood.
fn e_step(z: ArrayView2<'_, f64>, weights: &[f64], comps: &[Component]) -> (Array2<f64>, f64) {
    let k = comps.len();
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let rows: Vec<(Vec<f64>, f64)> = (0..z.nrows())
        .into_par_iter()
        .map(|i| {
            let row = z.row(i);
            let x = DVector::from_iterator(row.len(), row.iter().copied());
            let logs: Vec<f64> = (0..k).map(|q| log_w[q] + comps[q].log_density(&x)).collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
            let lse = max + sum.ln();
            (logs.iter().map(|l| (l - lse).exp()).collect(), lse)
        })
        .collect();
    let mut resp = Array2::zeros((z.nrows(), k));
    let mut ll = 0.0;
    for (i, (r, lse)) in rows.into_iter().enumerate() {
        for (q, v) in r.into_iter().enumerate() {
            resp[[i, q]] = v;
        }
        ll += lse;
    }
    (resp, ll)
}

/// Closed-form parameter update from responsibilities.
fn m_step(z: ArrayView2<'_, f64>, resp: &Array2<f64>, penalty: f64) -> (Vec<f64>, Array2<f64>, Vec<Array2<f64>>) {
    let (p, d) = z.dim();
    let k = resp.ncols();
    let nk = resp.sum_axis(Axis(0));
    let mut means = resp.t().dot(&z);
    for q in 0..k {
        let n = nk[q].max(f64::MIN_POSITIVE);
        means.row_mut(q).mapv_inplace(|v| v / n);
    }
    let covs: Vec<Array2<f64>> = (0..k)
        .into_par_iter()
        .map(|q| {
            let n = nk[q].max(f64::MIN_POSITIVE);
            let centered = &z - &means.row(q);
            let weighted = &centered * &resp.column(q).insert_axis(Axis(1));
            let mut cov = weighted.t().dot(&centered) / n;
            let shift = penalty / n;
            for j in 0..d {
                cov[[j, j]] += shift;
            }
            cov
        })
        .collect();
    let weights = nk.iter().map(|n| n / p as f64).collect();
    (weights, means, covs)
}

fn penalized(ll: f64, comps: &[Component], penalty: f64) -> f64 {
    ll - 0.5 * penalty * comps.iter().map(Component::inverse_trace).sum::<f64>()
}

pub fn gmm_fit(z: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<GmmModel> {
    gmm_fit_with(z, k, seed, &GmmConfig::default())
}

pub fn gmm_fit_with(z: ArrayView2<'_, f64>, k: usize, seed: u64, config: &GmmConfig) -> Result<GmmModel> {
    let (p, d) = z.dim();
    if d == 0 {
        return Err(Error::domain("embedding has zero dimensions"));
    }
    if k == 0 || p <= k {
        return Err(Error::domain(format!("GMM needs 1 <= k < p (k = {k}, p = {p})")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("GMM input contains non-finite values"));
    }

    let owned = z.to_owned();
    let data_var = owned.var_axis(Axis(0), 0.0);
    let avg_diag = (data_var.sum() / d as f64).max(f64::MIN_POSITIVE);
    let penalty = config.reg * avg_diag * p as f64 / k as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = kmeans_plus_plus(z, k, &mut rng)?;
    let (_, dists) = assign(z, means.view());
    let iso = (dists.iter().sum::<f64>() / (p * d) as f64).max(config.reg * avg_diag);
    let init_cov = Array2::from_diag(&Array1::from_elem(d, iso));
    let mut covs = vec![init_cov.clone(); k];
    let mut weights = vec![1.0 / k as f64; k];

    let mut trace = Vec::new();
    let mut reseeds = 0;
    let mut iterations = 0;
    let mut converged = false;
    let mut previous: Option<f64> = None;
    while iterations < config.max_iter {
        let comps = factor_all(&means, &covs)?;
        let (resp, ll) = e_step(z, &weights, &comps);
        if !ll.is_finite() {
            return Err(Error::numerical(format!("GMM log-likelihood not finite at iteration {iterations}")));
        }
        let objective = penalized(ll, &comps, penalty);
        trace.push(objective);
        if let Some(prev) = previous {
            if objective - prev < config.tol * prev.abs() {
                converged = true;
                break;
            }
        }
        previous = Some(objective);
        iterations += 1;

        let (w, m, c) = m_step(z, &resp, penalty);
        weights = w;
        means = m;
        covs = c;

        if let Some(q) = weights.iter().position(|w| *w < config.collapse_weight) {
            if reseeds >= config.max_reseeds {
                return Err(Error::numerical(format!(
                    "GMM component {q} collapsed after {reseeds} reseeds"
                )));
            }
            reseeds += 1;
            // the point the current mixture explains least decisively
            let worst = resp
                .rows()
                .into_iter()
                .map(|r| r.iter().copied().fold(0.0, f64::max))
                .enumerate()
                .fold((0, f64::INFINITY), |b, (i, v)| if v < b.1 { (i, v) } else { b })
                .0;
            means.row_mut(q).assign(&z.row(worst));
            covs[q] = init_cov.clone();
            weights[q] = 1.0 / k as f64;
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            trace.clear();
            previous = None;
        }
    }

    let comps = factor_all(&means, &covs)?;
    let (_, ll) = e_step(z, &weights, &comps);
    Ok(GmmModel {
        weights,
        means,
        covariances: covs,
        log_likelihood_trace: trace,
        log_likelihood: ll,
        iterations,
        converged,
        reseeds,
        penalty,
    })
}

/// Sample mean and (biased) sample covariance, used to check the `k = 1` fit.
pub fn sample_moments(z: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
    let owned = z.to_owned();
    let mean = column_means(&owned);
    let centered = &owned - &mean;
    let cov = centered.t().dot(&centered) / z.nrows() as f64;
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(p_each: usize, centers: &[[f64; 2]], sigma: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sigma).unwrap();
        let mut x = Array2::zeros((p_each * centers.len(), 2));
        for (c, center) in centers.iter().enumerate() {
            for i in 0..p_each {
                for j in 0..2 {
                    x[[c * p_each + i, j]] = center[j] + n.sample(&mut rng);
                }
            }
        }
        x
    }

    #[test]
    fn single_component_closed_form() {
        let x = blobs(300, &[[1.0, -2.0]], 0.7, 3);
        let m = gmm_fit(x.view(), 1, 0).unwrap();
        let (mean, cov) = sample_moments(x.view());
        let shift = 1e-6 * x.var_axis(Axis(0), 0.0).sum() / 2.0;
        assert_eq!(m.weights, vec![1.0]);
        for j in 0..2 {
            assert!((m.means[[0, j]] - mean[j]).abs() < 1e-10);
            for l in 0..2 {
                let expected = cov[[j, l]] + if j == l { shift } else { 0.0 };
                assert!((m.covariances[0][[j, l]] - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn responsibilities_normalized_and_assignment() {
        let x = blobs(200, &[[0.0, 0.0], [10.0, 0.0]], 1.0, 1);
        let m = gmm_fit(x.view(), 2, 5).unwrap();
        let r = m.responsibilities(x.view()).unwrap();
        for row in r.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-10);
        }
        let labels = m.assign(m.means.view()).unwrap();
        assert_eq!(labels, vec![0, 1]);
    }

    #[test]
    fn assignment_invariant_to_weight_scaling() {
        let x = blobs(150, &[[0.0, 0.0], [3.0, 1.0], [1.0, 4.0]], 1.0, 2);
        let m = gmm_fit(x.view(), 3, 1).unwrap();
        let mut scaled = m.clone();
        scaled.weights.iter_mut().for_each(|w| *w *= 7.5);
        let total: f64 = scaled.weights.iter().sum();
        scaled.weights.iter_mut().for_each(|w| *w /= total);
        assert_eq!(m.assign(x.view()).unwrap(), scaled.assign(x.view()).unwrap());
    }

    #[test]
    fn objective_monotone() {
        let x = blobs(100, &[[0.0, 0.0], [2.0, 2.0], [4.0, 0.0]], 1.0, 9);
        for seed in 0..5 {
            let m = gmm_fit(x.view(), 4, seed).unwrap();
            for w in m.log_likelihood_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let x = blobs(3, &[[0.0, 0.0]], 1.0, 0);
        assert!(gmm_fit(x.view(), 3, 0).is_err());
        assert!(gmm_fit(x.view(), 0, 0).is_err());
    }

    #[test]
    fn deterministic() {
        let x = blobs(200, &[[0.0, 0.0], [5.0, 1.0]], 1.0, 4);
        assert_eq!(gmm_fit(x.view(), 3, 8).unwrap(), gmm_fit(x.view(), 3, 8).unwrap());
    }
}
