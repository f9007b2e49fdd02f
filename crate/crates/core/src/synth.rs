//! Synthetic hyperspectral scenes with known ground truth.
//!
//! Endmembers are a linear continuum multiplied by Gaussian absorption
//! features; pixels are abundance-weighted linear mixtures plus white
//! Gaussian noise at a requested SNR.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::{spectral_angle, HsiCube, WavelengthGrid};
use crate::ingest::LabelRaster;

pub const MAX_ENDMEMBERS: usize = 10;
pub const GRID_LO_NM: f64 = 1000.0;
pub const GRID_HI_NM: f64 = 2600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Absorption {
    pub center_nm: f64,
    /// Gaussian standard deviation in nm.
    pub width_nm: f64,
    /// Fractional band depth in `(0, 1)`.
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endmember {
    /// Continuum reflectance at `GRID_LO_NM`.
    pub offset: f64,
    /// Continuum change across the full `[GRID_LO_NM, GRID_HI_NM]` span.
    pub slope: f64,
    pub absorptions: Vec<Absorption>,
}

impl Endmember {
    pub fn reflectance(&self, wavelength_nm: f64) -> f64 {
        let t = (wavelength_nm - GRID_LO_NM) / (GRID_HI_NM - GRID_LO_NM);
        let mut v = self.offset + self.slope * t;
        for a in &self.absorptions {
            let z = (wavelength_nm - a.center_nm) / a.width_nm;
            v *= 1.0 - a.depth * (-0.5 * z * z).exp();
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Rectangular tiles.
    Blocks,
    /// Nearest-seed cells around `2 r` random seeds.
    Voronoi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub endmembers: usize,
    /// Explicit endmembers; random ones are drawn from the seed when empty.
    pub library: Vec<Endmember>,
    pub layout: Layout,
    /// Upper bound of the per-pixel fraction mixed in from other endmembers; `< 0.5`.
    pub mixing: f64,
    /// `None` means noiseless.
    pub snr_db: Option<f64>,
    /// Standard deviation of a per-column multiplicative gain (striping); 0 disables.
    pub column_gain_jitter: f64,
    /// Minimum pairwise spectral angle (rad) between random endmembers.
    pub min_angle: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            bands: 50,
            endmembers: 5,
            library: Vec::new(),
            layout: Layout::Voronoi,
            mixing: 0.2,
            snr_db: Some(35.0),
            column_gain_jitter: 0.0,
            min_angle: 0.12,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let r = self.endmember_count();
        if r == 0 || r > MAX_ENDMEMBERS {
            return Err(Error::config(format!(
                "endmember count {r} outside 1..={MAX_ENDMEMBERS}"
            )));
        }
        if self.rows == 0 || self.cols == 0 || self.bands < 2 {
            return Err(Error::config("scene needs rows, cols >= 1 and bands >= 2"));
        }
        if !(0.0..0.5).contains(&self.mixing) {
            return Err(Error::config(format!("mixing {} outside [0, 0.5)", self.mixing)));
        }
        for e in &self.library {
            if e.absorptions.iter().any(|a| !(a.depth > 0.0 && a.depth < 1.0)) {
                return Err(Error::config("absorption depth must lie in (0, 1)"));
            }
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::config("snr_db must be finite; omit it for a noiseless scene"));
            }
        }
        Ok(())
    }

    fn endmember_count(&self) -> usize {
        if self.library.is_empty() {
            self.endmembers
        } else {
            self.library.len()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub cube: HsiCube,
    /// Noise-free cube (after any column gain).
    pub clean: HsiCube,
    /// Ground truth, `argmax abundance + 1` per pixel.
    pub labels: LabelRaster,
    pub endmembers: Vec<Endmember>,
    /// `r x w` endmember spectra on the scene grid.
    pub endmember_spectra: Array2<f64>,
    /// `(rows, cols, r)` abundances.
    pub abundances: Array3<f64>,
    pub noise_sigma: f64,
}

/// Draws `r` random endmembers whose pairwise spectral angles on `grid`
/// all reach `min_angle`.
pub fn random_endmembers(r: usize, grid: &WavelengthGrid, min_angle: f64, rng: &mut impl Rng) -> Result<Vec<Endmember>> {
    let mut out: Vec<Endmember> = Vec::with_capacity(r);
    let mut spectra: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut attempts = 0;
    while out.len() < r {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::config(format!(
                "could not draw {r} endmembers {min_angle} rad apart"
            )));
        }
        let n_feat = rng.random_range(1..=3);
        let absorptions = (0..n_feat)
            .map(|_| Absorption {
                center_nm: rng.random_range(1150.0..2450.0),
                width_nm: rng.random_range(30.0..150.0),
                depth: rng.random_range(0.2..0.7),
            })
            .collect();
        let e = Endmember {
            offset: rng.random_range(0.3..0.7),
            slope: rng.random_range(-0.2..0.2),
            absorptions,
        };
        let s: Vec<f64> = grid.centers().iter().map(|&l| e.reflectance(l)).collect();
        let distinct = spectra
            .iter()
            .all(|o| spectral_angle(o, &s).map(|a| a >= min_angle).unwrap_or(false));
        if distinct {
            spectra.push(s);
            out.push(e);
        }
    }
    Ok(out)
}

fn region_map(spec: &SynthSpec, r: usize, rng: &mut impl Rng) -> Vec<usize> {
    let (rows, cols) = (spec.rows, spec.cols);
    match spec.layout {
        Layout::Blocks => {
            let bx = (r as f64).sqrt().ceil() as usize;
            let by = r.div_ceil(bx);
            (0..rows * cols)
                .map(|i| {
                    let (row, col) = (i / cols, i % cols);
                    let ty = row * by / rows;
                    let tx = col * bx / cols;
                    (ty * bx + tx) % r
                })
                .collect()
        }
        Layout::Voronoi => {
            let seeds: Vec<(f64, f64, usize)> = (0..2 * r)
                .map(|i| {
                    (
                        rng.random_range(0.0..rows as f64),
                        rng.random_range(0.0..cols as f64),
                        i % r,
                    )
                })
                .collect();
            (0..rows * cols)
                .map(|i| {
                    let (y, x) = ((i / cols) as f64 + 0.5, (i % cols) as f64 + 0.5);
                    let mut best = (f64::INFINITY, 0);
                    for &(sy, sx, region) in &seeds {
                        let d = (y - sy).powi(2) + (x - sx).powi(2);
                        if d < best.0 {
                            best = (d, region);
                        }
                    }
                    best.1
                })
                .collect()
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let grid = WavelengthGrid::linspace(GRID_LO_NM, GRID_HI_NM, spec.bands)?;
    let r = spec.endmember_count();
    let endmembers = if spec.library.is_empty() {
        random_endmembers(r, &grid, spec.min_angle, &mut rng)?
    } else {
        spec.library.clone()
    };
    let w = spec.bands;
    let endmember_spectra = Array2::from_shape_fn((r, w), |(e, b)| endmembers[e].reflectance(grid.centers()[b]));

    let regions = region_map(spec, r, &mut rng);
    let (rows, cols) = (spec.rows, spec.cols);
    let mut abundances = Array3::zeros((rows, cols, r));
    let unit = Gamma::new(1.0, 1.0).expect("valid gamma");
    for (i, &region) in regions.iter().enumerate() {
        let (row, col) = (i / cols, i % cols);
        let m = if spec.mixing > 0.0 && r > 1 {
            rng.random_range(0.0..spec.mixing)
        } else {
            0.0
        };
        // Dirichlet(1, ..., 1) via normalized unit-gamma draws
        let draws: Vec<f64> = (0..r).map(|_| unit.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        for e in 0..r {
            let onehot = if e == region { 1.0 } else { 0.0 };
            abundances[[row, col, e]] = (1.0 - m) * onehot + m * draws[e] / total;
        }
    }

    let gains: Vec<f64> = if spec.column_gain_jitter > 0.0 {
        let n = Normal::new(1.0, spec.column_gain_jitter).map_err(|e| Error::config(e.to_string()))?;
        (0..cols).map(|_| n.sample(&mut rng)).collect()
    } else {
        vec![1.0; cols]
    };

    let mut clean = Array3::zeros((rows, cols, w));
    let mut labels = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let mut best = (f64::NEG_INFINITY, 0);
            for e in 0..r {
                let a = abundances[[row, col, e]];
                if a > best.0 {
                    best = (a, e);
                }
                for b in 0..w {
                    clean[[row, col, b]] += a * endmember_spectra[[e, b]];
                }
            }
            for b in 0..w {
                clean[[row, col, b]] *= gains[col];
            }
            labels.push(best.1 as u16 + 1);
        }
    }

    let signal_power = clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64;
    let noise_sigma = match spec.snr_db {
        Some(snr) => (signal_power / 10f64.powf(snr / 10.0)).sqrt(),
        None => 0.0,
    };
    let mut noisy = clean.clone();
    if noise_sigma > 0.0 {
        let n = Normal::new(0.0, noise_sigma).map_err(|e| Error::config(e.to_string()))?;
        noisy.iter_mut().for_each(|v| *v += n.sample(&mut rng));
    }

    let mut label_raster = LabelRaster::new(rows, cols, labels)?;
    label_raster.class_names = Some(
        std::iter::once("unlabeled".to_string())
            .chain((1..=r).map(|i| format!("endmember_{i}")))
            .collect(),
    );
    Ok(SynthScene {
        cube: HsiCube::new(noisy, grid.clone())?,
        clean: HsiCube::new(clean, grid)?,
        labels: label_raster,
        endmembers,
        endmember_spectra,
        abundances,
        noise_sigma,
    })
}
