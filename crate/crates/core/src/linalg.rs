//! Small dense linear-algebra helpers bridging `ndarray` and `nalgebra`.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};

pub fn to_nalgebra(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

pub fn to_ndarray(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// `(a + a^T) / 2`.
pub fn symmetrize(a: &Array2<f64>) -> Array2<f64> {
    (a + &a.t()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues in descending
/// order. Each eigenvector's largest-magnitude entry is made positive so the
/// result is reproducible.
pub fn sym_eigen_desc(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let eig = nalgebra::SymmetricEigen::new(to_nalgebra(symmetrize(a).view()));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = Array1::from_iter(order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let sign = canonical_sign(col.iter().copied());
        for i in 0..n {
            vectors[[i, dst]] = sign * col[i];
        }
    }
    (values, vectors)
}

/// `+1` or `-1` such that the largest-magnitude entry (first on ties) becomes positive.
pub fn canonical_sign(v: impl Iterator<Item = f64>) -> f64 {
    let mut best = 0.0f64;
    for x in v {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Sample mean of the rows of `x`.
pub fn column_means(x: &Array2<f64>) -> Array1<f64> {
    x.mean_axis(ndarray::Axis(0)).expect("non-empty matrix")
}
