#![allow(dead_code)]

use gypsum::synth::{generate, SynthScene, SynthSpec};
use gypsum::{HsiCube, PixelMatrix};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `p_each` isotropic Gaussian draws around each center.
pub fn blobs(p_each: usize, centers: &[Vec<f64>], sigma: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    let d = centers[0].len();
    let mut x = Array2::zeros((p_each * centers.len(), d));
    let mut labels = Vec::with_capacity(x.nrows());
    for (c, center) in centers.iter().enumerate() {
        for i in 0..p_each {
            for j in 0..d {
                x[[c * p_each + i, j]] = center[j] + n.sample(&mut r);
            }
            labels.push(c);
        }
    }
    (x, labels)
}

pub fn scene(rows: usize, cols: usize, bands: usize, r: usize, snr_db: Option<f64>, seed: u64) -> SynthScene {
    generate(&SynthSpec {
        rows,
        cols,
        bands,
        endmembers: r,
        snr_db,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

pub fn all_pixels(cube: &HsiCube) -> PixelMatrix {
    gypsum::hsi::flatten(cube, None).unwrap()
}

pub fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
