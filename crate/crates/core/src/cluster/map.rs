use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::PixelMatrix;

/// Label of masked / unclustered raster cells.
pub const NO_DATA: i32 = -1;

pub type Rgb = [u8; 3];

/// Twenty visually distinct colors; black is reserved for no-data.
const BASE_COLORS: [Rgb; 20] = [
    [0xe6, 0x19, 0x4b],
    [0x3c, 0xb4, 0x4b],
    [0xff, 0xe1, 0x19],
    [0x43, 0x63, 0xd8],
    [0xf5, 0x82, 0x31],
    [0x91, 0x1e, 0xb4],
    [0x42, 0xd4, 0xf4],
    [0xf0, 0x32, 0xe6],
    [0xbf, 0xef, 0x45],
    [0xfa, 0xbe, 0xd4],
    [0x46, 0x99, 0x90],
    [0xdc, 0xbe, 0xff],
    [0x9a, 0x63, 0x24],
    [0xff, 0xfa, 0xc8],
    [0x80, 0x00, 0x00],
    [0xaa, 0xff, 0xc3],
    [0x80, 0x80, 0x00],
    [0xff, 0xd8, 0xb1],
    [0x00, 0x00, 0x75],
    [0xa9, 0xa9, 0xa9],
];

/// The `i`-th color of the fixed cycle. Beyond the base table colors come
/// from golden-angle hue steps, never pure black.
pub fn cycle_color(i: usize) -> Rgb {
    if i < BASE_COLORS.len() {
        return BASE_COLORS[i];
    }
    let j = (i - BASE_COLORS.len()) as f64;
    let hue = (j * 137.507_764) % 360.0;
    let value = 0.95 - 0.25 * ((j / 7.0).floor() % 3.0) / 2.0;
    let sat = 0.55 + 0.4 * ((j / 3.0).floor() % 2.0);
    hsv_to_rgb(hue, sat, value)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to = |f: f64| ((f + m) * 255.0).round().clamp(1.0, 255.0) as u8;
    [to(r), to(g), to(b)]
}

pub fn default_palette(k: usize) -> Vec<Rgb> {
    (0..k).map(cycle_color).collect()
}

/// Hard per-pixel clustering of a raster.
///
/// `labels` covers the whole raster in row-major order with [`NO_DATA`] for
/// masked cells. `cluster_means` rows live in the preprocessed spectral space
/// (may have zero columns for maps read back from disk).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMap {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<i32>,
    pub k: usize,
    pub cluster_means: Array2<f64>,
    pub cluster_sizes: Vec<usize>,
    pub palette: Vec<Rgb>,
}

impl ClusterMap {
    /// Builds a map from per-pixel cluster indices. Clusters that received no
    /// pixels are dropped and the rest renumbered densely in index order.
    pub fn from_assignments(matrix: &PixelMatrix, assignments: &[usize]) -> Result<Self> {
        if assignments.len() != matrix.p() {
            return Err(Error::shape("assignments", matrix.p(), assignments.len()));
        }
        let max = assignments.iter().copied().max().unwrap_or(0);
        let mut counts = vec![0usize; max + 1];
        for &a in assignments {
            counts[a] += 1;
        }
        let mut remap = vec![usize::MAX; max + 1];
        let mut k = 0;
        for (old, &n) in counts.iter().enumerate() {
            if n > 0 {
                remap[old] = k;
                k += 1;
            }
        }
        let dense: Vec<i32> = assignments.iter().map(|&a| remap[a] as i32).collect();
        let labels = matrix.scatter(&dense, NO_DATA)?;
        let (rows, cols) = matrix.raster();
        let mut map = Self {
            rows,
            cols,
            labels,
            k,
            cluster_means: Array2::zeros((k, matrix.w())),
            cluster_sizes: vec![0; k],
            palette: default_palette(k),
        };
        map.recompute_means(matrix)?;
        Ok(map)
    }

    /// Map from raw raster labels, without spectral means.
    pub fn from_labels(rows: usize, cols: usize, labels: Vec<i32>) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(Error::shape("label raster length", rows * cols, labels.len()));
        }
        if let Some(bad) = labels.iter().find(|l| **l < NO_DATA) {
            return Err(Error::domain(format!("invalid cluster label {bad}")));
        }
        let k = labels.iter().map(|l| (*l + 1) as usize).max().unwrap_or(0);
        let mut sizes = vec![0usize; k];
        for &l in labels.iter().filter(|l| **l >= 0) {
            sizes[l as usize] += 1;
        }
        Ok(Self {
            rows,
            cols,
            labels,
            k,
            cluster_means: Array2::zeros((k, 0)),
            cluster_sizes: sizes,
            palette: default_palette(k),
        })
    }

    pub fn label_at(&self, row: usize, col: usize) -> i32 {
        self.labels[row * self.cols + col]
    }

    /// Labels of the matrix's pixels, in matrix row order.
    pub fn pixel_labels(&self, matrix: &PixelMatrix) -> Result<Vec<i32>> {
        if matrix.raster() != (self.rows, self.cols) {
            return Err(Error::shape(
                "raster dimensions",
                format!("{}x{}", self.rows, self.cols),
                format!("{:?}", matrix.raster()),
            ));
        }
        Ok(matrix
            .origin()
            .iter()
            .map(|&(r, c)| self.label_at(r, c))
            .collect())
    }

    /// Recomputes sizes and mean spectra of every cluster from `matrix`.
    pub fn recompute_means(&mut self, matrix: &PixelMatrix) -> Result<()> {
        let labels = self.pixel_labels(matrix)?;
        let mut sums = Array2::<f64>::zeros((self.k, matrix.w()));
        let mut sizes = vec![0usize; self.k];
        for (i, &l) in labels.iter().enumerate() {
            if l < 0 {
                continue;
            }
            let l = l as usize;
            if l >= self.k {
                return Err(Error::domain(format!("label {l} outside 0..{}", self.k)));
            }
            sizes[l] += 1;
            let mut row = sums.row_mut(l);
            row += &matrix.spectrum(i);
        }
        for (mut row, &n) in sums.rows_mut().into_iter().zip(&sizes) {
            if n > 0 {
                row /= n as f64;
            }
        }
        self.cluster_means = sums;
        self.cluster_sizes = sizes;
        Ok(())
    }

    /// Number of labeled (non-masked) pixels.
    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|l| **l >= 0).count()
    }
}
