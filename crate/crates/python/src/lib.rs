//! Python bindings. Arrays cross the boundary as nested lists.

use std::path::PathBuf;

use ndarray::{Array2, Array3};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use gypsum::autoencoder::{encode_all, train, AeModel};
use gypsum::cluster::kmeans::kmeans_fit;
use gypsum::cluster::{gmm_fit, merge_clusters, pca, ClusterMap, GmmModel};
use gypsum::pipeline::{run_pipeline, write_synth_fixture, AeOverrides, RunConfig};
use gypsum::preprocess::{self, PreprocessConfig, Workflow};
use gypsum::synth::{generate, SynthSpec};
use gypsum::{hsi, metrics, subspace, Error, HsiCube, PixelMatrix, WavelengthGrid};

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.exit_code() {
        2 => PyOSError::new_err(msg),
        3 if matches!(e, Error::Numerical(_)) => PyArithmeticError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn to_array(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Array2::from_shape_vec((rows.len(), w), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(spectra: &[Vec<f64>]) -> PyResult<PixelMatrix> {
    PixelMatrix::from_spectra(to_array(spectra)?).map_err(py_err)
}

fn to_usize(labels: &[i64]) -> PyResult<Vec<usize>> {
    labels
        .iter()
        .map(|&l| usize::try_from(l).map_err(|_| PyValueError::new_err(format!("negative label {l}"))))
        .collect()
}

#[pyfunction]
fn spectral_angle(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    hsi::spectral_angle(&a, &b).map_err(py_err)
}

#[pyfunction]
fn continuum_remove(wavelengths: Vec<f64>, spectrum: Vec<f64>) -> PyResult<Vec<f64>> {
    preprocess::continuum_remove(&wavelengths, &spectrum).map_err(py_err)
}

/// Runs the preprocessing chain on a `rows x cols x bands` cube.
/// Returns `(spectra, origins, wavelengths)` for the kept pixels.
#[pyfunction]
#[pyo3(signature = (cube, wavelengths, workflow = "lab", continuum_removal = None, wl_min = 1050.0, wl_max = 2550.0))]
fn preprocess_cube(
    cube: Vec<Vec<Vec<f64>>>,
    wavelengths: Vec<f64>,
    workflow: &str,
    continuum_removal: Option<bool>,
    wl_min: f64,
    wl_max: f64,
) -> PyResult<(Vec<Vec<f64>>, Vec<(usize, usize)>, Vec<f64>)> {
    let rows = cube.len();
    let cols = cube.first().map_or(0, Vec::len);
    let bands = wavelengths.len();
    let flat: Vec<f64> = cube.into_iter().flatten().flatten().collect();
    let data = Array3::from_shape_vec((rows, cols, bands), flat)
        .map_err(|e| PyValueError::new_err(format!("cube shape: {e}")))?;
    let grid = WavelengthGrid::new(wavelengths).map_err(py_err)?;
    let cube = HsiCube::new(data, grid).map_err(py_err)?;
    let mut config = PreprocessConfig {
        workflow: match workflow {
            "lab" => Workflow::Lab,
            "orbital" => Workflow::Orbital,
            other => return Err(PyValueError::new_err(format!("unknown workflow `{other}`"))),
        },
        wl_min,
        wl_max,
        ..PreprocessConfig::default()
    };
    config.continuum_removal = continuum_removal;
    let m = preprocess::preprocess(&cube, &config, None).map_err(py_err)?;
    Ok((to_rows(m.spectra()), m.origin().to_vec(), m.grid().centers().to_vec()))
}

/// Signal-subspace estimate: `(d, per_direction_cost, eigenvalues, noise_std)`.
#[pyfunction]
fn hysime(spectra: Vec<Vec<f64>>) -> PyResult<(usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (noise, sub) = subspace::hysime(&matrix(&spectra)?).map_err(py_err)?;
    Ok((sub.d, sub.per_direction_cost, sub.eigenvalues, subspace::noise_std(&noise).to_vec()))
}

#[pyclass(name = "Autoencoder", module = "gypsum_py")]
struct PyAutoencoder {
    model: AeModel,
    #[pyo3(get)]
    epoch_loss: Vec<f64>,
}

#[pymethods]
impl PyAutoencoder {
    /// Trains on `spectra` (`p x w`) with a `d`-dimensional embedding.
    #[staticmethod]
    #[pyo3(signature = (spectra, d, seed = 0, max_epochs = None, batch_size = None, hidden = None))]
    fn train(
        spectra: Vec<Vec<f64>>,
        d: usize,
        seed: u64,
        max_epochs: Option<usize>,
        batch_size: Option<usize>,
        hidden: Option<[usize; 2]>,
    ) -> PyResult<Self> {
        let m = matrix(&spectra)?;
        let overrides = AeOverrides {
            max_epochs,
            batch_size,
            hidden,
            ..AeOverrides::default()
        };
        let config = overrides.apply(m.w(), d, seed);
        config.validate().map_err(py_err)?;
        let (model, history) = train(&m, &config).map_err(py_err)?;
        Ok(Self {
            model,
            epoch_loss: history.epoch_loss,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            model: AeModel::load(&path).map_err(py_err)?,
            epoch_loss: Vec::new(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.model.save(&path).map_err(py_err)
    }

    #[getter]
    fn embed_dim(&self) -> usize {
        self.model.embed_dim()
    }

    fn encode(&self, spectra: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let e = encode_all(&self.model, &matrix(&spectra)?).map_err(py_err)?;
        Ok(to_rows(&e.z))
    }

    fn reconstruct(&self, spectra: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = to_array(&spectra)?;
        Ok(to_rows(&self.model.forward_batch(x.view()).1))
    }
}

#[pyclass(name = "GaussianMixture", module = "gypsum_py")]
struct PyGaussianMixture {
    model: GmmModel,
}

#[pymethods]
impl PyGaussianMixture {
    #[staticmethod]
    #[pyo3(signature = (points, k, seed = 0))]
    fn fit(points: Vec<Vec<f64>>, k: usize, seed: u64) -> PyResult<Self> {
        let x = to_array(&points)?;
        Ok(Self {
            model: gmm_fit(x.view(), k, seed).map_err(py_err)?,
        })
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.model.weights.clone()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        to_rows(&self.model.means)
    }

    #[getter]
    fn covariances(&self) -> Vec<Vec<Vec<f64>>> {
        self.model.covariances.iter().map(to_rows).collect()
    }

    #[getter]
    fn log_likelihood_trace(&self) -> Vec<f64> {
        self.model.log_likelihood_trace.clone()
    }

    fn predict(&self, points: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        self.model.assign(to_array(&points)?.view()).map_err(py_err)
    }

    fn responsibilities(&self, points: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.model.responsibilities(to_array(&points)?.view()).map_err(py_err)?))
    }
}

/// `(labels, centers, inertia)`.
#[pyfunction]
#[pyo3(signature = (points, k, seed = 0))]
fn kmeans(points: Vec<Vec<f64>>, k: usize, seed: u64) -> PyResult<(Vec<usize>, Vec<Vec<f64>>, f64)> {
    let r = kmeans_fit(to_array(&points)?.view(), k, seed).map_err(py_err)?;
    Ok((r.labels.clone(), to_rows(&r.centers), r.inertia()))
}

/// `(components, projected, explained_variance)`.
#[pyfunction]
fn pca_project(points: Vec<Vec<f64>>, n_components: usize) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>)> {
    let (model, projected) = pca(to_array(&points)?.view(), n_components).map_err(py_err)?;
    Ok((to_rows(&model.components), to_rows(&projected), model.explained_variance.to_vec()))
}

/// Merges clusters of `spectra` whose mean spectra are closer than `lam` radians.
/// Returns the new dense labels and the `(kept, absorbed, angle)` steps.
#[pyfunction]
fn merge(spectra: Vec<Vec<f64>>, labels: Vec<i64>, lam: f64) -> PyResult<(Vec<i32>, Vec<(usize, usize, f64)>)> {
    let m = matrix(&spectra)?;
    let map = ClusterMap::from_assignments(&m, &to_usize(&labels)?).map_err(py_err)?;
    let (merged, steps) = merge_clusters(&map, &m, lam).map_err(py_err)?;
    Ok((
        merged.pixel_labels(&m).map_err(py_err)?,
        steps.into_iter().map(|s| (s.kept, s.absorbed, s.angle)).collect(),
    ))
}

#[pyfunction]
fn calinski_harabasz(points: Vec<Vec<f64>>, labels: Vec<i64>) -> PyResult<f64> {
    metrics::calinski_harabasz(to_array(&points)?.view(), &to_usize(&labels)?).map_err(py_err)
}

#[pyfunction]
fn davies_bouldin(points: Vec<Vec<f64>>, labels: Vec<i64>) -> PyResult<f64> {
    metrics::davies_bouldin(to_array(&points)?.view(), &to_usize(&labels)?).map_err(py_err)
}

#[pyfunction]
fn nmi(a: Vec<i64>, b: Vec<i64>) -> PyResult<f64> {
    metrics::nmi(&to_usize(&a)?, &to_usize(&b)?).map_err(py_err)
}

#[pyfunction]
fn ari(a: Vec<i64>, b: Vec<i64>) -> PyResult<f64> {
    metrics::ari(&to_usize(&a)?, &to_usize(&b)?).map_err(py_err)
}

#[pyfunction]
fn f1_matched(pred: Vec<i64>, truth: Vec<i64>) -> PyResult<f64> {
    metrics::f1_matched(&to_usize(&pred)?, &to_usize(&truth)?).map_err(py_err)
}

#[pyclass(name = "SynthScene", module = "gypsum_py")]
struct PySynthScene {
    #[pyo3(get)]
    rows: usize,
    #[pyo3(get)]
    cols: usize,
    #[pyo3(get)]
    wavelengths: Vec<f64>,
    /// Row-major ground-truth class per pixel, `1..=r`.
    #[pyo3(get)]
    labels: Vec<u16>,
    #[pyo3(get)]
    endmember_spectra: Vec<Vec<f64>>,
    #[pyo3(get)]
    noise_sigma: f64,
    cube: Array3<f64>,
}

#[pymethods]
impl PySynthScene {
    /// Row-major pixel spectra, `rows * cols` of them.
    fn spectra(&self) -> Vec<Vec<f64>> {
        let b = self.cube.dim().2;
        self.cube
            .as_slice()
            .expect("standard layout")
            .chunks(b)
            .map(<[f64]>::to_vec)
            .collect()
    }

    /// `rows x cols x bands` nested lists.
    fn cube(&self) -> Vec<Vec<Vec<f64>>> {
        self.cube
            .outer_iter()
            .map(|plane| plane.outer_iter().map(|s| s.to_vec()).collect())
            .collect()
    }
}

fn synth_spec(rows: usize, cols: usize, bands: usize, endmembers: usize, snr_db: Option<f64>, seed: u64) -> SynthSpec {
    SynthSpec {
        rows,
        cols,
        bands,
        endmembers,
        snr_db,
        seed,
        ..SynthSpec::default()
    }
}

#[pyfunction]
#[pyo3(signature = (rows = 64, cols = 64, bands = 50, endmembers = 5, snr_db = Some(35.0), seed = 0))]
fn synth_scene(rows: usize, cols: usize, bands: usize, endmembers: usize, snr_db: Option<f64>, seed: u64) -> PyResult<PySynthScene> {
    let s = generate(&synth_spec(rows, cols, bands, endmembers, snr_db, seed)).map_err(py_err)?;
    let (data, grid) = s.cube.into_parts();
    Ok(PySynthScene {
        rows,
        cols,
        wavelengths: grid.centers().to_vec(),
        labels: s.labels.labels,
        endmember_spectra: to_rows(&s.endmember_spectra),
        noise_sigma: s.noise_sigma,
        cube: data,
    })
}

/// Writes a synthetic scene, its labels and a run config into `out_dir`;
/// returns the config path.
#[pyfunction]
#[pyo3(signature = (out_dir, rows = 64, cols = 64, bands = 50, endmembers = 5, snr_db = Some(35.0), seed = 0))]
fn write_synth(out_dir: PathBuf, rows: usize, cols: usize, bands: usize, endmembers: usize, snr_db: Option<f64>, seed: u64) -> PyResult<PathBuf> {
    let f = write_synth_fixture(&synth_spec(rows, cols, bands, endmembers, snr_db, seed), &out_dir).map_err(py_err)?;
    Ok(f.config)
}

#[pyclass(name = "RunResult", module = "gypsum_py")]
struct PyRunResult {
    #[pyo3(get)]
    out_dir: PathBuf,
    #[pyo3(get)]
    d: Option<usize>,
    #[pyo3(get)]
    k: Option<usize>,
    #[pyo3(get)]
    final_k: Option<usize>,
    /// Row-major cluster labels, -1 for masked pixels.
    #[pyo3(get)]
    labels: Vec<i32>,
    #[pyo3(get)]
    manifest_json: String,
    #[pyo3(get)]
    metrics_json: String,
}

/// Runs the pipeline from a TOML config file.
#[pyfunction]
#[pyo3(signature = (config, out = None, seed = None))]
fn run(py: Python<'_>, config: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> PyResult<PyRunResult> {
    let mut cfg = RunConfig::load(&config).map_err(py_err)?;
    if out.is_some() {
        cfg.out = out;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let outcome = py.detach(|| run_pipeline(&cfg)).map_err(py_err)?;
    let g = outcome.manifest.gypsum.as_ref();
    Ok(PyRunResult {
        out_dir: outcome.out_dir.clone(),
        d: g.map(|g| g.d),
        k: g.map(|g| g.k),
        final_k: g.map(|g| g.final_k),
        labels: outcome.map.as_ref().map(|m| m.labels.clone()).unwrap_or_default(),
        manifest_json: to_json(&outcome.manifest),
        metrics_json: to_json(&outcome.metrics),
    })
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

#[pymodule]
fn gypsum_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(spectral_angle, m)?)?;
    m.add_function(wrap_pyfunction!(continuum_remove, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess_cube, m)?)?;
    m.add_function(wrap_pyfunction!(hysime, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(pca_project, m)?)?;
    m.add_function(wrap_pyfunction!(merge, m)?)?;
    m.add_function(wrap_pyfunction!(calinski_harabasz, m)?)?;
    m.add_function(wrap_pyfunction!(davies_bouldin, m)?)?;
    m.add_function(wrap_pyfunction!(nmi, m)?)?;
    m.add_function(wrap_pyfunction!(ari, m)?)?;
    m.add_function(wrap_pyfunction!(f1_matched, m)?)?;
    m.add_function(wrap_pyfunction!(synth_scene, m)?)?;
    m.add_function(wrap_pyfunction!(write_synth, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<PyAutoencoder>()?;
    m.add_class::<PyGaussianMixture>()?;
    m.add_class::<PySynthScene>()?;
    m.add_class::<PyRunResult>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
