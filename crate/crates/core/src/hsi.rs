//! Core hyperspectral types and per-spectrum math.
//!
//! Cubes are stored band-interleaved-by-pixel: an `Array3` of shape
//! `(rows, cols, bands)` in standard layout, so each pixel's spectrum is a
//! contiguous slice.

use ndarray::{Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Band-center wavelengths in nanometers, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavelengthGrid {
    centers: Vec<f64>,
}

impl WavelengthGrid {
    pub fn new(centers: Vec<f64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::domain("wavelength grid is empty"));
        }
        if let Some(bad) = centers.iter().find(|c| !c.is_finite() || **c <= 0.0) {
            return Err(Error::domain(format!(
                "wavelength {bad} is not finite and positive"
            )));
        }
        if let Some(i) = centers.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::domain(format!(
                "wavelength grid not strictly increasing at band {}",
                i + 1
            )));
        }
        Ok(Self { centers })
    }

    /// `bands` centers evenly spaced over `[lo, hi]` inclusive.
    pub fn linspace(lo: f64, hi: f64, bands: usize) -> Result<Self> {
        if bands == 1 {
            return Self::new(vec![lo]);
        }
        let step = (hi - lo) / (bands - 1) as f64;
        Self::new((0..bands).map(|i| lo + step * i as f64).collect())
    }

    /// Placeholder grid `1, 2, ..., bands` for data without wavelength metadata.
    pub fn band_index(bands: usize) -> Self {
        Self {
            centers: (1..=bands).map(|i| i as f64).collect(),
        }
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Sub-grid made of the given band indices (assumed increasing).
    pub fn select(&self, bands: &[usize]) -> Result<Self> {
        Self::new(bands.iter().map(|&b| self.centers[b]).collect())
    }
}

/// Reflectance raster, `rows x cols x bands`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    data: Array3<f64>,
    grid: WavelengthGrid,
}

impl HsiCube {
    pub fn new(data: Array3<f64>, grid: WavelengthGrid) -> Result<Self> {
        let (_, _, bands) = data.dim();
        if bands != grid.len() {
            return Err(Error::shape("wavelength grid length", bands, grid.len()));
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().to_owned()
        };
        Ok(Self { data, grid })
    }

    pub fn rows(&self) -> usize {
        self.data.dim().0
    }

    pub fn cols(&self) -> usize {
        self.data.dim().1
    }

    pub fn bands(&self) -> usize {
        self.data.dim().2
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_parts(self) -> (Array3<f64>, WavelengthGrid) {
        (self.data, self.grid)
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f64] {
        let b = self.bands();
        let start = (row * self.cols() + col) * b;
        &self.data.as_slice().expect("standard layout")[start..start + b]
    }

    pub fn spectrum_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let b = self.bands();
        let start = (row * self.cols() + col) * b;
        &mut self.data.as_slice_mut().expect("standard layout")[start..start + b]
    }
}

/// Per-pixel keep flags; `true` keeps the pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl PixelMask {
    pub fn all(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            keep: vec![true; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != rows * cols {
            return Err(Error::shape("mask length", rows * cols, keep.len()));
        }
        Ok(Self { rows, cols, keep })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn keeps(&self, row: usize, col: usize) -> bool {
        self.keep[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, keep: bool) {
        self.keep[row * self.cols + col] = keep;
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }

    /// Logical AND of two masks.
    pub fn intersect(&self, other: &PixelMask) -> Result<Self> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::shape(
                "mask dimensions",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            keep: self.keep.iter().zip(&other.keep).map(|(a, b)| *a && *b).collect(),
        })
    }
}

/// Flattened `p x w` matrix of kept-pixel spectra with raster provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMatrix {
    spectra: Array2<f64>,
    origin: Vec<(usize, usize)>,
    grid: WavelengthGrid,
    raster: (usize, usize),
}

impl PixelMatrix {
    /// Builds a matrix from explicit parts, checking that origins are unique
    /// and inside the `raster` bounds.
    pub fn new(
        spectra: Array2<f64>,
        origin: Vec<(usize, usize)>,
        grid: WavelengthGrid,
        raster: (usize, usize),
    ) -> Result<Self> {
        let (p, w) = spectra.dim();
        if origin.len() != p {
            return Err(Error::shape("origin length", p, origin.len()));
        }
        if grid.len() != w {
            return Err(Error::shape("wavelength grid length", w, grid.len()));
        }
        let mut seen = vec![false; raster.0 * raster.1];
        for &(r, c) in &origin {
            if r >= raster.0 || c >= raster.1 {
                return Err(Error::domain(format!(
                    "origin ({r}, {c}) outside {}x{} raster",
                    raster.0, raster.1
                )));
            }
            let idx = r * raster.1 + c;
            if seen[idx] {
                return Err(Error::domain(format!("duplicate origin ({r}, {c})")));
            }
            seen[idx] = true;
        }
        Ok(Self {
            spectra,
            origin,
            grid,
            raster,
        })
    }

    /// Matrix without raster provenance: rows are laid out as a `p x 1` raster.
    pub fn from_spectra(spectra: Array2<f64>) -> Result<Self> {
        let (p, w) = spectra.dim();
        let origin = (0..p).map(|i| (i, 0)).collect();
        Self::new(spectra, origin, WavelengthGrid::band_index(w), (p, 1))
    }

    pub fn p(&self) -> usize {
        self.spectra.nrows()
    }

    pub fn w(&self) -> usize {
        self.spectra.ncols()
    }

    pub fn spectra(&self) -> &Array2<f64> {
        &self.spectra
    }

    pub fn spectrum(&self, i: usize) -> ArrayView1<'_, f64> {
        self.spectra.row(i)
    }

    pub fn origin(&self) -> &[(usize, usize)] {
        &self.origin
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    /// `(rows, cols)` of the raster the pixels came from.
    pub fn raster(&self) -> (usize, usize) {
        self.raster
    }

    /// Same provenance, new spectra (same shape).
    pub fn with_spectra(&self, spectra: Array2<f64>) -> Result<Self> {
        if spectra.dim() != self.spectra.dim() {
            return Err(Error::shape(
                "spectra shape",
                format!("{:?}", self.spectra.dim()),
                format!("{:?}", spectra.dim()),
            ));
        }
        Ok(Self {
            spectra,
            origin: self.origin.clone(),
            grid: self.grid.clone(),
            raster: self.raster,
        })
    }

    /// Scatters per-pixel values back onto the raster, filling unkept cells.
    pub fn scatter<T: Clone>(&self, values: &[T], fill: T) -> Result<Vec<T>> {
        if values.len() != self.p() {
            return Err(Error::shape("per-pixel values", self.p(), values.len()));
        }
        let mut out = vec![fill; self.raster.0 * self.raster.1];
        for (v, &(r, c)) in values.iter().zip(&self.origin) {
            out[r * self.raster.1 + c] = v.clone();
        }
        Ok(out)
    }
}

fn dot_norms(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot, na.sqrt(), nb.sqrt())
}

/// Angle in radians between two spectra, in `[0, pi]`.
pub fn spectral_angle(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("spectrum length", a.len(), b.len()));
    }
    let (dot, na, nb) = dot_norms(a, b);
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::domain("spectral angle of a zero or non-finite vector"));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0).acos())
}

pub fn l2_norm(s: &[f64]) -> f64 {
    s.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Unit-norm copy of `s`. Zero-norm input is an error; preprocessing masks
/// such pixels instead of normalizing them.
pub fn l2_normalize(s: &[f64]) -> Result<Vec<f64>> {
    let n = l2_norm(s);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::domain("cannot normalize a zero-norm spectrum"));
    }
    Ok(s.iter().map(|v| v / n).collect())
}

/// Row-major traversal of kept pixels.
pub fn flatten(cube: &HsiCube, mask: Option<&PixelMask>) -> Result<PixelMatrix> {
    let (rows, cols, bands) = cube.data.dim();
    if let Some(m) = mask {
        if (m.rows, m.cols) != (rows, cols) {
            return Err(Error::shape(
                "mask dimensions",
                format!("{rows}x{cols}"),
                format!("{}x{}", m.rows, m.cols),
            ));
        }
    }
    let mut origin = Vec::with_capacity(rows * cols);
    let mut values = Vec::with_capacity(rows * cols * bands);
    for r in 0..rows {
        for c in 0..cols {
            if mask.is_none_or(|m| m.keeps(r, c)) {
                origin.push((r, c));
                values.extend_from_slice(cube.spectrum(r, c));
            }
        }
    }
    if origin.is_empty() {
        return Err(Error::domain("every pixel is masked; nothing to flatten"));
    }
    let spectra = Array2::from_shape_vec((origin.len(), bands), values)
        .expect("flattened length matches shape");
    PixelMatrix::new(spectra, origin, cube.grid.clone(), (rows, cols))
}

/// Inverse of [`flatten`]: kept pixels restored, others set to `fill`.
pub fn unflatten(matrix: &PixelMatrix, fill: f64) -> Result<HsiCube> {
    let (rows, cols) = matrix.raster;
    let mut data = Array3::from_elem((rows, cols, matrix.w()), fill);
    for (i, &(r, c)) in matrix.origin.iter().enumerate() {
        data.slice_mut(ndarray::s![r, c, ..]).assign(&matrix.spectra.row(i));
    }
    HsiCube::new(data, matrix.grid.clone())
}
