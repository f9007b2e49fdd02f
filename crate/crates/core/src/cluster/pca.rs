use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{canonical_sign, column_means, to_nalgebra};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `n x w`, orthonormal rows, descending variance.
    pub components: Array2<f64>,
    /// Variance along each component.
    pub explained_variance: Array1<f64>,
}

impl Pca {
    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.mean).dot(&self.components.t())
    }

    pub fn inverse_transform(&self, projected: ArrayView2<'_, f64>) -> Array2<f64> {
        projected.dot(&self.components) + &self.mean
    }
}

/// Principal components from the SVD of the mean-centered data. Each
/// component's largest-magnitude entry is positive.
pub fn pca(x: ArrayView2<'_, f64>, n_components: usize) -> Result<(Pca, Array2<f64>)> {
    let (p, w) = x.dim();
    if n_components == 0 || n_components > p.min(w) {
        return Err(Error::domain(format!(
            "n_components = {n_components} must be in 1..={}",
            p.min(w)
        )));
    }
    let mean = column_means(&x.to_owned());
    let centered = &x - &mean;
    let svd = nalgebra::SVD::new(to_nalgebra(centered.view()), false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut components = Array2::zeros((n_components, w));
    let mut variance = Array1::zeros(n_components);
    let denom = (p.max(2) - 1) as f64;
    for (dst, &src) in order.iter().take(n_components).enumerate() {
        let row = v_t.row(src);
        let sign = canonical_sign(row.iter().copied());
        for j in 0..w {
            components[[dst, j]] = sign * row[j];
        }
        variance[dst] = svd.singular_values[src].powi(2) / denom;
    }
    let model = Pca {
        mean,
        components,
        explained_variance: variance,
    };
    let projected = centered.dot(&model.components.t());
    Ok((model, projected))
}

/// Sample variance of each projected column.
pub fn projected_variance(projected: &Array2<f64>) -> Array1<f64> {
    projected.var_axis(Axis(0), 1.0)
}
