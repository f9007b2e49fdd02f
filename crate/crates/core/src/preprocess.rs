//! Reflectance preprocessing: clip, optional ratio, wavelength trim, per-pixel
//! normalization, masking, optional continuum removal, flatten.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::{self, HsiCube, PixelMask, PixelMatrix};

/// Smallest ratio-spectrum value accepted as a divisor.
pub const RATIO_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Workflow {
    /// Laboratory imaging: continuum removal on by default.
    #[default]
    Lab,
    /// Orbital imaging: ratioing by bland-pixel ROIs, no continuum removal by default.
    Orbital,
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Roi {
    pub fn new(row: usize, col: usize, height: usize, width: usize) -> Self {
        Self {
            row,
            col,
            height,
            width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub workflow: Workflow,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub wl_min: f64,
    pub wl_max: f64,
    /// Bland-pixel rectangles; ratioing runs iff this is non-empty.
    pub ratio_rois: Vec<Roi>,
    /// `None` follows the workflow: on for lab, off for orbital.
    pub continuum_removal: Option<bool>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            workflow: Workflow::Lab,
            clip_lo: 0.0,
            clip_hi: 1.0,
            wl_min: 1050.0,
            wl_max: 2550.0,
            ratio_rois: Vec::new(),
            continuum_removal: None,
        }
    }
}

impl PreprocessConfig {
    pub fn lab() -> Self {
        Self::default()
    }

    pub fn orbital(rois: Vec<Roi>) -> Self {
        Self {
            workflow: Workflow::Orbital,
            ratio_rois: rois,
            ..Self::default()
        }
    }

    pub fn applies_continuum_removal(&self) -> bool {
        self.continuum_removal
            .unwrap_or(self.workflow == Workflow::Lab)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_lo < self.clip_hi) {
            return Err(Error::config(format!(
                "clip_lo ({}) must be below clip_hi ({})",
                self.clip_lo, self.clip_hi
            )));
        }
        if !(self.wl_min < self.wl_max) {
            return Err(Error::config(format!(
                "wl_min ({}) must be below wl_max ({})",
                self.wl_min, self.wl_max
            )));
        }
        Ok(())
    }
}

/// Clamps values into `[lo, hi]`. Non-finite values become 0 and their
/// pixel is dropped from the returned keep-mask.
pub fn clip_reflectance_range(cube: &HsiCube, lo: f64, hi: f64) -> (HsiCube, PixelMask) {
    let mut out = cube.clone();
    let (rows, cols) = (cube.rows(), cube.cols());
    let mut valid = PixelMask::all(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let spectrum = out.spectrum_mut(r, c);
            let mut finite = true;
            for v in spectrum.iter_mut() {
                if v.is_finite() {
                    *v = v.clamp(lo, hi);
                } else {
                    *v = 0.0;
                    finite = false;
                }
            }
            if !finite {
                valid.set(r, c, false);
            }
        }
    }
    (out, valid)
}

pub fn clip_reflectance(cube: &HsiCube) -> (HsiCube, PixelMask) {
    clip_reflectance_range(cube, 0.0, 1.0)
}

/// Mean spectrum over the union of `rois`, skipping pixels not in `valid`.
pub fn ratio_spectrum(cube: &HsiCube, rois: &[Roi], valid: Option<&PixelMask>) -> Result<Vec<f64>> {
    let (rows, cols) = (cube.rows(), cube.cols());
    let mut member = vec![false; rows * cols];
    for roi in rois {
        if roi.height == 0 || roi.width == 0 || roi.row + roi.height > rows || roi.col + roi.width > cols {
            return Err(Error::domain(format!(
                "ratio ROI {roi:?} is empty or outside the {rows}x{cols} raster"
            )));
        }
        for r in roi.row..roi.row + roi.height {
            for c in roi.col..roi.col + roi.width {
                member[r * cols + c] = valid.is_none_or(|m| m.keeps(r, c));
            }
        }
    }
    let mut sum = vec![0.0; cube.bands()];
    let mut n = 0usize;
    for r in 0..rows {
        for c in 0..cols {
            if member[r * cols + c] {
                n += 1;
                for (acc, v) in sum.iter_mut().zip(cube.spectrum(r, c)) {
                    *acc += v;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::domain("ratio ROIs contain no usable pixels"));
    }
    Ok(sum.into_iter().map(|s| s / n as f64).collect())
}

pub fn ratio_image(cube: &HsiCube, rois: &[Roi]) -> Result<HsiCube> {
    ratio_image_masked(cube, rois, None)
}

/// Divides every pixel by the ROI-mean spectrum.
pub fn ratio_image_masked(cube: &HsiCube, rois: &[Roi], valid: Option<&PixelMask>) -> Result<HsiCube> {
    let ratio = ratio_spectrum(cube, rois, valid)?;
    if let Some((band, v)) = ratio.iter().enumerate().find(|(_, v)| **v <= RATIO_EPS) {
        return Err(Error::domain(format!(
            "ratio spectrum is {v:e} at band {band} ({} nm); must exceed {RATIO_EPS:e}",
            cube.grid().centers()[band]
        )));
    }
    let mut out = cube.clone();
    for mut pixel in out.data_mut().lanes_mut(Axis(2)) {
        for (v, d) in pixel.iter_mut().zip(&ratio) {
            *v /= d;
        }
    }
    Ok(out)
}

/// Keeps bands whose center lies in `[wl_min, wl_max]` (inclusive).
pub fn clip_wavelengths(cube: &HsiCube, wl_min: f64, wl_max: f64) -> Result<HsiCube> {
    let keep: Vec<usize> = cube
        .grid()
        .centers()
        .iter()
        .enumerate()
        .filter(|(_, c)| **c >= wl_min && **c <= wl_max)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::domain(format!(
            "no band centers inside [{wl_min}, {wl_max}] nm"
        )));
    }
    if keep.len() == cube.bands() {
        return Ok(cube.clone());
    }
    let data = cube.data().select(Axis(2), &keep);
    HsiCube::new(data, cube.grid().select(&keep)?)
}

/// Normalizes every pixel to unit l2 norm. Zero-norm pixels are left as-is
/// and cleared in the returned keep-mask.
pub fn normalize_pixels(cube: &HsiCube) -> (HsiCube, PixelMask) {
    let mut out = cube.clone();
    let mut valid = PixelMask::all(cube.rows(), cube.cols());
    for r in 0..cube.rows() {
        for c in 0..cube.cols() {
            let s = out.spectrum_mut(r, c);
            match hsi::l2_normalize(s) {
                Ok(n) => s.copy_from_slice(&n),
                Err(_) => valid.set(r, c, false),
            }
        }
    }
    (out, valid)
}

/// Indices of the upper convex hull of `(x[i], y[i])`, `x` strictly increasing.
pub fn upper_hull(x: &[f64], y: &[f64]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // pop b when it lies on or below the chord a -> i
            let cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a]);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

/// Divides one spectrum by its upper-hull continuum.
pub fn continuum_remove(wavelengths: &[f64], spectrum: &[f64]) -> Result<Vec<f64>> {
    if spectrum.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("continuum removal of a non-finite spectrum"));
    }
    let w = spectrum.len();
    if w == 0 || spectrum[0] <= 0.0 || spectrum[w - 1] <= 0.0 {
        return Err(Error::domain(
            "continuum removal needs positive spectrum endpoints",
        ));
    }
    let hull = upper_hull(wavelengths, spectrum);
    let mut out = vec![0.0; w];
    for seg in hull.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let slope = (spectrum[b] - spectrum[a]) / (wavelengths[b] - wavelengths[a]);
        out[a] = 1.0;
        for j in a + 1..b {
            let continuum = spectrum[a] + slope * (wavelengths[j] - wavelengths[a]);
            out[j] = spectrum[j] / continuum;
        }
    }
    out[w - 1] = 1.0;
    Ok(out)
}

/// Continuum removal applied to every row of `matrix`.
pub fn remove_continuum(matrix: &PixelMatrix) -> Result<PixelMatrix> {
    let wl = matrix.grid().centers();
    let mut out = Array2::zeros(matrix.spectra().dim());
    for (i, (row, mut dst)) in matrix
        .spectra()
        .rows()
        .into_iter()
        .zip(out.rows_mut())
        .enumerate()
    {
        let s = row.to_vec();
        let cr = continuum_remove(wl, &s).map_err(|e| {
            let (r, c) = matrix.origin()[i];
            Error::domain(format!("pixel ({r}, {c}): {e}"))
        })?;
        dst.assign(&ndarray::ArrayView1::from(&cr));
    }
    matrix.with_spectra(out)
}

/// Full preprocessing chain. `mask` is the optional user keep-mask.
pub fn preprocess(cube: &HsiCube, config: &PreprocessConfig, mask: Option<&PixelMask>) -> Result<PixelMatrix> {
    config.validate()?;
    if let Some(m) = mask {
        if (m.rows(), m.cols()) != (cube.rows(), cube.cols()) {
            return Err(Error::shape(
                "mask dimensions",
                format!("{}x{}", cube.rows(), cube.cols()),
                format!("{}x{}", m.rows(), m.cols()),
            ));
        }
    }

    let (mut x, mut keep) = clip_reflectance_range(cube, config.clip_lo, config.clip_hi);
    if !config.ratio_rois.is_empty() {
        let roi_valid = match mask {
            Some(m) => keep.intersect(m)?,
            None => keep.clone(),
        };
        x = ratio_image_masked(&x, &config.ratio_rois, Some(&roi_valid))?;
    }
    x = clip_wavelengths(&x, config.wl_min, config.wl_max)?;
    let (x, nonzero) = normalize_pixels(&x);
    keep = keep.intersect(&nonzero)?;
    if let Some(m) = mask {
        keep = keep.intersect(m)?;
    }

    let cr = config.applies_continuum_removal();
    if cr {
        let last = x.bands() - 1;
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                let s = x.spectrum(r, c);
                if s[0] <= 0.0 || s[last] <= 0.0 {
                    keep.set(r, c, false);
                }
            }
        }
    }
    let matrix = hsi::flatten(&x, Some(&keep))?;
    if cr {
        remove_continuum(&matrix)
    } else {
        Ok(matrix)
    }
}
