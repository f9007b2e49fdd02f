//! Lloyd k-means with k-means++ seeding.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    /// `k x d`.
    pub centers: Array2<f64>,
    pub labels: Vec<usize>,
    /// Sum of squared distances to the assigned center after every assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().unwrap_or(&0.0)
    }
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index drawn with probability proportional to `weights`.
fn weighted_pick(weights: &[f64], total: f64, rng: &mut impl Rng) -> usize {
    let target = rng.random_range(0.0..total);
    let mut acc = 0.0;
    for (i, d) in weights.iter().enumerate() {
        acc += d;
        if *d > 0.0 && acc > target {
            return i;
        }
    }
    // rounding can leave the target just past the last positive weight
    weights.iter().rposition(|d| *d > 0.0).expect("positive total")
}

/// Greedy k-means++ seeding: first center uniform; each further center is the
/// best of `2 + ln k` candidates drawn with probability proportional to the
/// squared distance to the nearest chosen center.
pub fn kmeans_plus_plus(x: ArrayView2<'_, f64>, k: usize, rng: &mut impl Rng) -> Result<Array2<f64>> {
    let p = x.nrows();
    if k == 0 || k > p {
        return Err(Error::domain(format!("k = {k} must be in 1..={p}")));
    }
    let trials = 2 + (k as f64).ln() as usize;
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..p));
    let mut nearest: Vec<f64> = (0..p).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        if total <= 0.0 {
            chosen.push((0..p).find(|i| !chosen.contains(i)).expect("k <= p"));
            continue;
        }
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = weighted_pick(&nearest, total, rng);
            let updated: Vec<f64> = nearest
                .iter()
                .enumerate()
                .map(|(i, d)| d.min(sq_dist(x.row(i), x.row(cand))))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, cand, updated));
            }
        }
        let (_, next, updated) = best.expect("at least one trial");
        chosen.push(next);
        nearest = updated;
    }
    let mut centers = Array2::zeros((k, x.ncols()));
    for (row, &i) in chosen.iter().enumerate() {
        centers.row_mut(row).assign(&x.row(i));
    }
    Ok(centers)
}

/// Nearest center per point (lowest index on ties) and the squared distances.
pub fn assign(x: ArrayView2<'_, f64>, centers: ArrayView2<'_, f64>) -> (Vec<usize>, Vec<f64>) {
    let mut labels = Vec::with_capacity(x.nrows());
    let mut dists = Vec::with_capacity(x.nrows());
    for row in x.rows() {
        let mut best = (f64::INFINITY, 0);
        for (j, c) in centers.rows().into_iter().enumerate() {
            let d = sq_dist(row, c);
            if d < best.0 {
                best = (d, j);
            }
        }
        labels.push(best.1);
        dists.push(best.0);
    }
    (labels, dists)
}

pub fn kmeans_fit(x: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_fit_with(x, k, seed, DEFAULT_MAX_ITER)
}

pub fn kmeans_fit_with(x: ArrayView2<'_, f64>, k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus(x, k, &mut rng)?;
    let (mut labels, mut dists) = assign(x.view(), centers.view());
    let mut trace = vec![dists.iter().sum::<f64>()];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        update_centers(x, &labels, &mut dists, &mut centers);
        let (new_labels, new_dists) = assign(x.view(), centers.view());
        trace.push(new_dists.iter().sum());
        let changed = new_labels != labels;
        labels = new_labels;
        dists = new_dists;
        if !changed {
            break;
        }
    }
    Ok(KMeansResult {
        centers,
        labels,
        inertia_trace: trace,
        iterations,
    })
}

/// Means of assigned points; an empty cluster takes the point currently
/// farthest from its own center.
fn update_centers(x: ArrayView2<'_, f64>, labels: &[usize], dists: &mut [f64], centers: &mut Array2<f64>) {
    let k = centers.nrows();
    let mut sums = Array2::<f64>::zeros(centers.dim());
    let mut counts = vec![0usize; k];
    for (row, &l) in x.rows().into_iter().zip(labels) {
        counts[l] += 1;
        let mut s = sums.row_mut(l);
        s += &row;
    }
    for j in 0..k {
        if counts[j] > 0 {
            let mean = &sums.row(j) / counts[j] as f64;
            centers.row_mut(j).assign(&mean);
        } else {
            let far = dists
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &d)| if d > b.1 { (i, d) } else { b })
                .0;
            centers.row_mut(j).assign(&x.row(far));
            dists[far] = 0.0;
        }
    }
}
