//! Post-process merging of clusters with near-parallel mean spectra.

use serde::{Deserialize, Serialize};

use super::map::{default_palette, ClusterMap, NO_DATA};
use crate::error::{Error, Result};
use crate::hsi::{spectral_angle, PixelMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    /// Input-map id of the cluster that absorbed the other (the lower id).
    pub kept: usize,
    pub absorbed: usize,
    /// Spectral angle between the two means at merge time (rad).
    pub angle: f64,
}

/// Repeatedly merges the pair of clusters whose mean spectra form the
/// smallest spectral angle, while that angle is below `lambda`. Means are
/// recomputed from `matrix`; merged means are size-weighted. Ties go to the
/// lexicographically lowest pair. Output labels are dense, ordered by the
/// lowest input id in each merged group.
pub fn merge_clusters(map: &ClusterMap, matrix: &PixelMatrix, lambda: f64) -> Result<(ClusterMap, Vec<MergeStep>)> {
    if !(lambda >= 0.0) {
        return Err(Error::domain(format!("merge threshold {lambda} must be >= 0")));
    }
    let mut base = map.clone();
    base.recompute_means(matrix)?;
    let k = base.k;
    let w = matrix.w();

    // groups[i] = Some((representative sum-mean, size)) while cluster i is alive
    let mut alive: Vec<bool> = base.cluster_sizes.iter().map(|n| *n > 0).collect();
    let mut means: Vec<Vec<f64>> = base.cluster_means.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut sizes = base.cluster_sizes.clone();
    let mut owner: Vec<usize> = (0..k).collect();
    let mut steps = Vec::new();

    let mut angles = vec![vec![f64::INFINITY; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            if alive[i] && alive[j] {
                angles[i][j] = spectral_angle(&means[i], &means[j])?;
            }
        }
    }

    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..k {
            if !alive[i] {
                continue;
            }
            for j in i + 1..k {
                if alive[j] && best.is_none_or(|(_, _, a)| angles[i][j] < a) {
                    best = Some((i, j, angles[i][j]));
                }
            }
        }
        let Some((i, j, angle)) = best else { break };
        if !(angle < lambda) {
            break;
        }
        let (ni, nj) = (sizes[i] as f64, sizes[j] as f64);
        let merged: Vec<f64> = (0..w).map(|b| (ni * means[i][b] + nj * means[j][b]) / (ni + nj)).collect();
        means[i] = merged;
        sizes[i] += sizes[j];
        alive[j] = false;
        for o in owner.iter_mut() {
            if *o == j {
                *o = i;
            }
        }
        steps.push(MergeStep {
            kept: i,
            absorbed: j,
            angle,
        });
        for other in 0..k {
            if other != i && alive[other] {
                let a = spectral_angle(&means[i], &means[other])?;
                let (lo, hi) = if other < i { (other, i) } else { (i, other) };
                angles[lo][hi] = a;
            }
        }
    }

    let mut dense = vec![usize::MAX; k];
    let mut next = 0;
    for i in 0..k {
        if alive[i] {
            dense[i] = next;
            next += 1;
        }
    }
    let labels = base
        .labels
        .iter()
        .map(|&l| if l == NO_DATA { NO_DATA } else { dense[owner[l as usize]] as i32 })
        .collect();
    let mut out = ClusterMap {
        rows: base.rows,
        cols: base.cols,
        labels,
        k: next,
        cluster_means: base.cluster_means.clone(),
        cluster_sizes: Vec::new(),
        palette: default_palette(next),
    };
    out.recompute_means(matrix)?;
    Ok((out, steps))
}

/// Smallest spectral angle between any two cluster means (infinite when fewer than two).
pub fn min_pairwise_angle(map: &ClusterMap) -> Result<f64> {
    let mut best = f64::INFINITY;
    for i in 0..map.k {
        for j in i + 1..map.k {
            let a = spectral_angle(
                map.cluster_means.row(i).as_slice().expect("row"),
                map.cluster_means.row(j).as_slice().expect("row"),
            )?;
            best = best.min(a);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn matrix(rows: Vec<Vec<f64>>) -> PixelMatrix {
        let p = rows.len();
        let w = rows[0].len();
        PixelMatrix::from_spectra(Array2::from_shape_vec((p, w), rows.concat()).unwrap()).unwrap()
    }

    fn dir(deg: f64) -> Vec<f64> {
        let r = deg.to_radians();
        vec![r.cos(), r.sin()]
    }

    #[test]
    fn identical_means_merge() {
        let m = matrix(vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![0.0, 1.0]]);
        let map = ClusterMap::from_assignments(&m, &[0, 1, 2]).unwrap();
        let (out, steps) = merge_clusters(&map, &m, 0.01).unwrap();
        assert_eq!(out.k, 2);
        assert_eq!(out.labels, vec![0, 0, 1]);
        assert_eq!(steps.len(), 1);
        assert_eq!((steps[0].kept, steps[0].absorbed), (0, 1));
    }

    #[test]
    fn zero_threshold_is_identity() {
        let m = matrix(vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![0.0, 1.0]]);
        let map = ClusterMap::from_assignments(&m, &[0, 1, 2]).unwrap();
        let (out, steps) = merge_clusters(&map, &m, 0.0).unwrap();
        assert!(steps.is_empty());
        assert_eq!(out.labels, map.labels);
        assert_eq!(out.k, 3);
    }

    #[test]
    fn three_directions() {
        let m = matrix(vec![dir(0.0), dir(1.0), dir(30.0)]);
        let map = ClusterMap::from_assignments(&m, &[0, 1, 2]).unwrap();
        let (out, steps) = merge_clusters(&map, &m, 5f64.to_radians()).unwrap();
        assert_eq!(out.k, 2);
        assert_eq!(out.labels, vec![0, 0, 1]);
        assert!((steps[0].angle - 1f64.to_radians()).abs() < 1e-9);
        assert!(min_pairwise_angle(&out).unwrap() > 5f64.to_radians());
    }

    #[test]
    fn merged_mean_is_size_weighted() {
        let m = matrix(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.02]]);
        let map = ClusterMap::from_assignments(&m, &[0, 0, 1]).unwrap();
        let (out, _) = merge_clusters(&map, &m, 0.1).unwrap();
        assert_eq!(out.k, 1);
        assert_eq!(out.cluster_sizes, vec![3]);
        assert!((out.cluster_means[[0, 1]] - 0.02 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn negative_threshold_rejected() {
        let m = matrix(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let map = ClusterMap::from_assignments(&m, &[0, 1]).unwrap();
        assert!(merge_clusters(&map, &m, -0.1).is_err());
        assert!(merge_clusters(&map, &m, f64::NAN).is_err());
    }
}
