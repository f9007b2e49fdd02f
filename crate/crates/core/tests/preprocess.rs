use gypsum::hsi::{HsiCube, WavelengthGrid};
use gypsum::preprocess::{
    clip_wavelengths, continuum_remove, preprocess, ratio_image, PreprocessConfig, Roi,
};
use ndarray::Array3;
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Expected {
    origins: Vec<(usize, usize)>,
    spectra: Vec<Vec<f64>>,
    wavelengths: Vec<f64>,
}

#[derive(Deserialize)]
struct Fixture {
    rows: usize,
    cols: usize,
    wavelengths: Vec<f64>,
    cube: Vec<f64>,
    rois: Vec<[usize; 4]>,
    lab: Expected,
    orbital: Expected,
}

fn fixture() -> (Fixture, HsiCube) {
    let text = include_str!("fixtures/preprocess_oracle.json");
    let f: Fixture = serde_json::from_str(text).unwrap();
    let data = Array3::from_shape_vec((f.rows, f.cols, f.wavelengths.len()), f.cube.clone()).unwrap();
    let cube = HsiCube::new(data, WavelengthGrid::new(f.wavelengths.clone()).unwrap()).unwrap();
    (f, cube)
}

fn check(config: &PreprocessConfig, cube: &HsiCube, want: &Expected) {
    let got = preprocess(cube, config, None).unwrap();
    assert_eq!(got.origin(), want.origins.as_slice());
    assert_eq!(got.grid().centers(), want.wavelengths.as_slice());
    for (i, row) in want.spectra.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let g = got.spectra()[[i, j]];
            assert!((g - v).abs() <= 1e-12, "pixel {i} band {j}: {g} vs {v}");
        }
    }
}

#[test]
fn lab_chain_matches_frozen_oracle() {
    let (f, cube) = fixture();
    check(&PreprocessConfig::lab(), &cube, &f.lab);
}

#[test]
fn orbital_chain_matches_frozen_oracle() {
    let (f, cube) = fixture();
    let rois = f.rois.iter().map(|r| Roi::new(r[0], r[1], r[2], r[3])).collect();
    check(&PreprocessConfig::orbital(rois), &cube, &f.orbital);
}

#[test]
fn affine_spectrum_has_flat_continuum() {
    let wl: Vec<f64> = (0..20).map(|i| 1000.0 + 37.0 * i as f64).collect();
    let s: Vec<f64> = wl.iter().map(|x| 0.2 + 1e-4 * x).collect();
    for v in continuum_remove(&wl, &s).unwrap() {
        assert!((v - 1.0).abs() < 1e-12);
    }
}

#[test]
fn wavelength_trim_is_inclusive() {
    let grid = vec![1000.0, 1050.0, 2000.0, 2550.0, 2600.0];
    let cube = HsiCube::new(Array3::from_elem((1, 1, 5), 0.5), WavelengthGrid::new(grid).unwrap()).unwrap();
    let out = clip_wavelengths(&cube, 1050.0, 2550.0).unwrap();
    assert_eq!(out.grid().centers(), &[1050.0, 2000.0, 2550.0]);
}

#[test]
fn constant_ratio_spectrum_divides_out() {
    let grid = WavelengthGrid::linspace(1100.0, 2500.0, 8).unwrap();
    let profile: Vec<f64> = (0..8).map(|b| 0.3 + 0.05 * b as f64).collect();
    let cube = HsiCube::new(Array3::from_shape_fn((3, 3, 8), |(_, _, b)| profile[b]), grid).unwrap();
    let out = ratio_image(&cube, &[Roi::new(0, 0, 2, 2)]).unwrap();
    assert!(out.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
}

proptest! {
    #[test]
    fn output_rows_have_unit_norm(seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let grid = WavelengthGrid::linspace(1000.0, 2600.0, 24).unwrap();
        let data = Array3::from_shape_fn((4, 4, 24), |_| rng.random_range(0.05..0.95));
        let cube = HsiCube::new(data, grid).unwrap();
        let cfg = PreprocessConfig { continuum_removal: Some(false), ..PreprocessConfig::lab() };
        let m = preprocess(&cube, &cfg, None).unwrap();
        for row in m.spectra().rows() {
            prop_assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn continuum_removed_values_in_unit_interval(seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let wl: Vec<f64> = (0..30).map(|i| 1000.0 + 50.0 * i as f64).collect();
        let s: Vec<f64> = (0..30).map(|_| rng.random_range(0.01..1.0)).collect();
        let cr = continuum_remove(&wl, &s).unwrap();
        prop_assert!(cr.iter().all(|v| *v > 0.0 && *v <= 1.0 + 1e-12));
        prop_assert_eq!(cr[0], 1.0);
        prop_assert_eq!(cr[29], 1.0);
    }
}
