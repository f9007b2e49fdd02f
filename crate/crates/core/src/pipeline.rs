//! End-to-end runs: configuration, stage orchestration and artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{encode_all, train, AeConfig, AeModel, Embedding, TrainHistory};
use crate::cluster::kmeans::kmeans_fit;
use crate::cluster::{gmm_fit_with, merge_clusters, pca, ClusterMap, GmmConfig, GmmModel, MergeStep, Pca};
use crate::error::{Error, Result};
use crate::hsi::{HsiCube, PixelMask, PixelMatrix};
use crate::ingest::{
    header_path_for, match_palette, read_cluster_map, read_envi_with_grid, read_labels, read_mask,
    read_wavelength_sidecar, write_cluster_map, write_envi, write_json, write_labels, write_means_csv,
    DataType, Interleave, LabelRaster,
};
use crate::metrics::{self, evaluate, MetricsReport, Space};
use crate::preprocess::{preprocess, PreprocessConfig};
use crate::subspace::{cluster_count, hysime, SubspaceResult};
use crate::synth::{generate, SynthScene, SynthSpec};

pub const SCHEMA_VERSION: u32 = 1;
pub const LOCK_FILE: &str = ".gypsum.lock";
pub const DEFAULT_LAMBDA: f64 = 0.05;

/// Input rasters, each named by its data file; headers sit alongside with a `.hdr` extension.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub cube: PathBuf,
    /// Explicit cube header when it is not `cube` with a `.hdr` extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header: Option<PathBuf>,
    /// 8-bit keep-mask raster (nonzero keeps).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    /// 16-bit ground-truth classes, 0 = unlabeled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Earlier cluster map whose colors the new map should reuse.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_map: Option<PathBuf>,
    /// One wavelength (nm) per line; overrides the header's list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelengths: Option<PathBuf>,
}

/// Autoencoder settings that may replace the defaults; sizes follow from the data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_rel_improvement: Option<f64>,
}

impl AeOverrides {
    pub fn apply(&self, w: usize, d: usize, seed: u64) -> AeConfig {
        let mut c = AeConfig::new(w, d);
        c.seed = seed;
        if let Some(v) = self.hidden {
            c.hidden = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            c.max_epochs = v;
        }
        if let Some(v) = self.patience {
            c.patience = v;
        }
        if let Some(v) = self.min_rel_improvement {
            c.min_rel_improvement = v;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding size; estimated by HySime when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    /// Mixture components; `2 d` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub enabled: bool,
    /// Merge threshold (rad); must be given when enabled.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl PostprocessConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            enabled: true,
            lambda: Some(lambda),
        }
    }

    fn threshold(&self) -> Option<f64> {
        if self.enabled {
            self.lambda
        } else {
            None
        }
    }
}

fn default_components() -> usize {
    20
}

fn default_baseline_k() -> usize {
    52
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum BaselineConfig {
    #[default]
    None,
    PcaKmeans {
        #[serde(default = "default_components")]
        n_components: usize,
        #[serde(default = "default_baseline_k")]
        k: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub inputs: Inputs,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub autoencoder: AeOverrides,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub gmm: GmmConfig,
    #[serde(default)]
    pub postprocess: PostprocessConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
}

impl RunConfig {
    pub fn new(cube: impl Into<PathBuf>) -> Self {
        Self {
            inputs: Inputs {
                cube: cube.into(),
                ..Inputs::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.inputs;
        fix(&mut i.cube);
        for p in [&mut i.header, &mut i.mask, &mut i.labels, &mut i.reference_map, &mut i.wavelengths]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if let Some(o) = self.out.as_mut() {
            fix(o);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        if self.postprocess.enabled {
            match self.postprocess.lambda {
                None => return Err(Error::config("postprocess.lambda is required when postprocess is enabled")),
                Some(l) if !(l >= 0.0) || !l.is_finite() => {
                    return Err(Error::config(format!("postprocess.lambda = {l} must be a finite angle >= 0")))
                }
                _ => {}
            }
        }
        if self.model.d == Some(0) {
            return Err(Error::config("model.d must be >= 1"));
        }
        if self.model.k == Some(0) {
            return Err(Error::config("model.k must be >= 1"));
        }
        if let BaselineConfig::PcaKmeans { n_components, k } = self.baseline {
            if n_components == 0 || k == 0 {
                return Err(Error::config("baseline n_components and k must be >= 1"));
            }
        }
        if !(self.gmm.tol >= 0.0) || !(self.gmm.reg > 0.0) || self.gmm.max_iter == 0 {
            return Err(Error::config("gmm needs tol >= 0, reg > 0 and max_iter >= 1"));
        }
        Ok(())
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            seed: self.seed,
            d: self.model.d,
            k: self.model.k,
            autoencoder: self.autoencoder.clone(),
            gmm: self.gmm.clone(),
            lambda: self.postprocess.threshold(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Wall-clock per stage; failing stages are tagged in the returned error.
#[derive(Debug, Default)]
pub struct StageTimer {
    pub stages: Vec<StageTiming>,
}

impl StageTimer {
    pub fn stage<T>(&mut self, name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(name));
        self.stages.push(StageTiming {
            stage: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

/// Everything the clustering stages need besides the pixels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    pub seed: u64,
    pub d: Option<usize>,
    pub k: Option<usize>,
    pub autoencoder: AeOverrides,
    pub gmm: GmmConfig,
    /// Merge threshold; no merging when absent.
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Hysime,
    Override,
    Derived,
}

#[derive(Debug, Clone)]
pub struct GypsumResult {
    pub d: usize,
    pub d_source: Source,
    pub k: usize,
    pub k_source: Source,
    pub subspace: Option<SubspaceResult>,
    pub model: AeModel,
    pub history: TrainHistory,
    pub embedding: Embedding,
    pub gmm: GmmModel,
    /// Map straight from the mixture, before merging.
    pub raw_map: ClusterMap,
    pub map: ClusterMap,
    pub merge: Vec<MergeStep>,
}

/// HySime (unless `d` is given) -> autoencoder -> GMM -> optional merge.
pub fn cluster_pixels(matrix: &PixelMatrix, params: &ModelParams, timer: &mut StageTimer) -> Result<GypsumResult> {
    let (d, d_source, subspace) = match params.d {
        Some(d) => (d, Source::Override, None),
        None => {
            let (_, sub) = timer.stage("hysime", || hysime(matrix))?;
            (sub.d, Source::Hysime, Some(sub))
        }
    };
    let k = cluster_count(d, params.k);
    let k_source = if params.k.is_some() { Source::Override } else { Source::Derived };
    if k >= matrix.p() {
        return Err(Error::config(format!("k = {k} must be below the pixel count {}", matrix.p())));
    }
    let ae_config = params.autoencoder.apply(matrix.w(), d, params.seed);
    ae_config.validate()?;
    let (model, history) = timer.stage("autoencoder", || train(matrix, &ae_config))?;
    let embedding = timer.stage("encode", || encode_all(&model, matrix))?;
    let (gmm, assignments) = timer.stage("gmm", || {
        let gmm = gmm_fit_with(embedding.z.view(), k, params.seed, &params.gmm)?;
        let labels = gmm.assign(embedding.z.view())?;
        Ok((gmm, labels))
    })?;
    let raw_map = ClusterMap::from_assignments(matrix, &assignments)?;
    let (map, merge) = match params.lambda {
        Some(lambda) => timer.stage("postprocess", || merge_clusters(&raw_map, matrix, lambda))?,
        None => (raw_map.clone(), Vec::new()),
    };
    Ok(GypsumResult {
        d,
        d_source,
        k,
        k_source,
        subspace,
        model,
        history,
        embedding,
        gmm,
        raw_map,
        map,
        merge,
    })
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub n_components: usize,
    pub k: usize,
    pub pca: Pca,
    pub projected: ndarray::Array2<f64>,
    pub kmeans_iterations: usize,
    pub inertia: f64,
    pub raw_map: ClusterMap,
    pub map: ClusterMap,
    pub merge: Vec<MergeStep>,
}

/// PCA projection -> k-means -> optional merge.
pub fn baseline_pixels(
    matrix: &PixelMatrix,
    n_components: usize,
    k: usize,
    seed: u64,
    lambda: Option<f64>,
    timer: &mut StageTimer,
) -> Result<BaselineResult> {
    let (model, projected) = timer.stage("baseline_pca", || pca(matrix.spectra().view(), n_components))?;
    let km = timer.stage("baseline_kmeans", || {
        if k >= matrix.p() {
            return Err(Error::config(format!("baseline k = {k} must be below the pixel count {}", matrix.p())));
        }
        kmeans_fit(projected.view(), k, seed)
    })?;
    let raw_map = ClusterMap::from_assignments(matrix, &km.labels)?;
    let (map, merge) = match lambda {
        Some(l) => timer.stage("baseline_postprocess", || merge_clusters(&raw_map, matrix, l))?,
        None => (raw_map.clone(), Vec::new()),
    };
    Ok(BaselineResult {
        n_components,
        k,
        pca: model,
        projected,
        kmeans_iterations: km.iterations,
        inertia: km.inertia(),
        raw_map,
        map,
        merge,
    })
}

/// Loaded and preprocessed inputs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cube: HsiCube,
    pub matrix: PixelMatrix,
    /// Per matrix row: class id, or -1 where unlabeled.
    pub truth: Option<Vec<i32>>,
    pub reference: Option<ClusterMap>,
}

fn check_raster(what: &'static str, cube: &HsiCube, rows: usize, cols: usize) -> Result<()> {
    if (rows, cols) != (cube.rows(), cube.cols()) {
        return Err(Error::shape(
            what,
            format!("{}x{}", cube.rows(), cube.cols()),
            format!("{rows}x{cols}"),
        ));
    }
    Ok(())
}

pub fn truth_per_pixel(labels: &LabelRaster, matrix: &PixelMatrix) -> Vec<i32> {
    matrix
        .origin()
        .iter()
        .map(|&(r, c)| match labels.get(r, c) {
            0 => -1,
            v => v as i32,
        })
        .collect()
}

pub fn prepare(config: &RunConfig, timer: &mut StageTimer) -> Result<Prepared> {
    let inputs = &config.inputs;
    let (cube, mask, labels, reference) = timer.stage("load", || {
        let grid = inputs.wavelengths.as_ref().map(read_wavelength_sidecar).transpose()?;
        let header = inputs.header.clone().unwrap_or_else(|| header_path_for(&inputs.cube));
        let cube = read_envi_with_grid(&header, &inputs.cube, grid)?;
        let mask: Option<PixelMask> = inputs
            .mask
            .as_ref()
            .map(|m| read_mask(header_path_for(m), m))
            .transpose()?;
        if let Some(m) = &mask {
            check_raster("mask dimensions", &cube, m.rows(), m.cols())?;
        }
        let labels = inputs
            .labels
            .as_ref()
            .map(|l| read_labels(header_path_for(l), l))
            .transpose()?;
        if let Some(l) = &labels {
            check_raster("label raster dimensions", &cube, l.rows, l.cols)?;
        }
        let reference = inputs
            .reference_map
            .as_ref()
            .map(|r| read_cluster_map(&header_path_for(r), r))
            .transpose()?;
        if let Some(r) = &reference {
            check_raster("reference map dimensions", &cube, r.rows, r.cols)?;
        }
        Ok((cube, mask, labels, reference))
    })?;
    let matrix = timer.stage("preprocess", || preprocess(&cube, &config.preprocess, mask.as_ref()))?;
    let truth = labels.as_ref().map(|l| truth_per_pixel(l, &matrix));
    Ok(Prepared {
        cube,
        matrix,
        truth,
        reference,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceReports {
    pub embedding: MetricsReport,
    pub spectral: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gypsum: Option<SpaceReports>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<SpaceReports>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub bands_used: usize,
    pub pixels: usize,
    pub masked_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HysimeTrace {
    pub d: usize,
    /// Per eigen-direction MSE contribution; negative entries span the signal subspace.
    pub per_direction_cost: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeSummary {
    pub config: AeConfig,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub epoch_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSummary {
    pub iterations: usize,
    pub converged: bool,
    pub reseeds: usize,
    pub log_likelihood: f64,
    pub penalty: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeSummary {
    pub lambda: f64,
    pub steps: Vec<MergeStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GypsumManifest {
    pub d: usize,
    pub d_source: Source,
    pub k: usize,
    pub k_source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hysime: Option<HysimeTrace>,
    pub autoencoder: AeSummary,
    pub gmm: GmmSummary,
    /// Nonempty clusters out of the mixture.
    pub clusters: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeSummary>,
    pub final_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineManifest {
    pub n_components: usize,
    pub k: usize,
    pub explained_variance: Vec<f64>,
    pub kmeans_iterations: usize,
    pub inertia: f64,
    pub clusters: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeSummary>,
    pub final_k: usize,
}

/// Reproducibility record. Holds no timings, so identical runs give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub version: String,
    pub seed: u64,
    /// Configuration as run, minus the output directory.
    pub config: RunConfig,
    pub input: InputSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gypsum: Option<GypsumManifest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineManifest>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingsFile {
    pub schema_version: u32,
    pub stages: Vec<StageTiming>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub metrics: MetricsFile,
    pub map: Option<ClusterMap>,
    pub baseline_map: Option<ClusterMap>,
    pub timings: Vec<StageTiming>,
}

/// Exclusive use of an output directory for one run.
struct OutputDir {
    path: PathBuf,
    created: bool,
    lock: PathBuf,
    files: Vec<PathBuf>,
}

impl OutputDir {
    fn acquire(path: &Path) -> Result<Self> {
        let created = !path.exists();
        fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        let lock = path.join(LOCK_FILE);
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    Error::io(&lock, std::io::Error::other("output directory is locked by another run"))
                } else {
                    Error::io(&lock, e)
                }
            })?;
        Ok(Self {
            path: path.to_path_buf(),
            created,
            lock,
            files: Vec::new(),
        })
    }

    fn file(&mut self, name: &str) -> PathBuf {
        let p = self.path.join(name);
        self.files.push(p.clone());
        p
    }

    fn names(&self) -> Vec<String> {
        let mut n: Vec<String> = self
            .files
            .iter()
            .filter_map(|p| p.file_name().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        n.sort();
        n
    }

    fn release(self) {
        let _ = fs::remove_file(&self.lock);
    }

    fn abort(self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        let _ = fs::remove_file(&self.lock);
        if self.created {
            let _ = fs::remove_dir(&self.path);
        }
    }
}

fn merge_summary(lambda: Option<f64>, steps: &[MergeStep]) -> Option<MergeSummary> {
    lambda.map(|lambda| MergeSummary {
        lambda,
        steps: steps.to_vec(),
    })
}

fn reports(points: ndarray::ArrayView2<'_, f64>, space_note: &str, map: &ClusterMap, prepared: &Prepared) -> Result<SpaceReports> {
    let labels = map.pixel_labels(&prepared.matrix)?;
    let truth = prepared.truth.as_deref();
    let mut embedding = evaluate(points, &labels, truth, Space::Embedding)?;
    embedding.notes.insert(0, space_note.to_string());
    let spectral = evaluate(prepared.matrix.spectra().view(), &labels, truth, Space::Spectral)?;
    Ok(SpaceReports { embedding, spectral })
}

fn write_map(out: &mut OutputDir, prefix: &str, map: &ClusterMap, prepared: &Prepared) -> Result<()> {
    let png = out.file(&format!("{prefix}cluster_map.png"));
    let img = out.file(&format!("{prefix}cluster_map.img"));
    out.file(&format!("{prefix}cluster_map.hdr"));
    write_cluster_map(map, &png, &img)?;
    let csv = out.file(&format!("{prefix}cluster_means.csv"));
    write_means_csv(map, prepared.matrix.grid(), &csv)
}

fn input_summary(prepared: &Prepared) -> InputSummary {
    let (rows, cols) = (prepared.cube.rows(), prepared.cube.cols());
    InputSummary {
        rows,
        cols,
        bands: prepared.cube.bands(),
        bands_used: prepared.matrix.w(),
        pixels: prepared.matrix.p(),
        masked_pixels: rows * cols - prepared.matrix.p(),
    }
}

/// Full run: GyPSUM clustering plus the baseline when configured.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutcome> {
    execute(config, true)
}

/// Baseline-only run producing the same artifact set, tagged `baseline_`.
pub fn run_baseline(config: &RunConfig) -> Result<RunOutcome> {
    if config.baseline == BaselineConfig::None {
        return Err(Error::config("baseline.method is `none`"));
    }
    execute(config, false)
}

fn execute(config: &RunConfig, with_gypsum: bool) -> Result<RunOutcome> {
    config.validate()?;
    let out_path = config
        .out
        .clone()
        .ok_or_else(|| Error::config("no output directory given"))?;
    let mut out = OutputDir::acquire(&out_path)?;
    let started = Instant::now();
    match execute_in(config, with_gypsum, &mut out, started) {
        Ok(outcome) => {
            out.release();
            Ok(outcome)
        }
        Err(e) => {
            out.abort();
            Err(e)
        }
    }
}

fn execute_in(config: &RunConfig, with_gypsum: bool, out: &mut OutputDir, started: Instant) -> Result<RunOutcome> {
    let mut timer = StageTimer::default();
    let prepared = prepare(config, &mut timer)?;
    let params = config.model_params();

    let gypsum = if with_gypsum {
        let mut g = cluster_pixels(&prepared.matrix, &params, &mut timer)?;
        if let Some(reference) = &prepared.reference {
            g.map.palette = match_palette(&g.map, reference)?;
        }
        Some(g)
    } else {
        None
    };
    let baseline = match config.baseline {
        BaselineConfig::None => None,
        BaselineConfig::PcaKmeans { n_components, k } => {
            let mut b = baseline_pixels(&prepared.matrix, n_components, k, config.seed, params.lambda, &mut timer)?;
            let reference = prepared.reference.as_ref().or(gypsum.as_ref().map(|g| &g.map));
            if let Some(r) = reference {
                b.map.palette = match_palette(&b.map, r)?;
            }
            Some(b)
        }
    };

    let metrics = timer.stage("metrics", || {
        Ok(MetricsFile {
            schema_version: SCHEMA_VERSION,
            gypsum: gypsum
                .as_ref()
                .map(|g| reports(g.embedding.z.view(), "embedding: autoencoder latent space", &g.map, &prepared))
                .transpose()?,
            baseline: baseline
                .as_ref()
                .map(|b| reports(b.projected.view(), "embedding: PCA projection", &b.map, &prepared))
                .transpose()?,
        })
    })?;

    let manifest = timer.stage("write", || {
        if let Some(g) = &gypsum {
            write_map(out, "", &g.map, &prepared)?;
            let ae = out.file("autoencoder.json");
            g.model.save(&ae)?;
        }
        if let Some(b) = &baseline {
            write_map(out, "baseline_", &b.map, &prepared)?;
        }
        let metrics_path = out.file("metrics.json");
        write_json(&metrics, &metrics_path)?;
        let manifest_path = out.file("manifest.json");
        out.file("timings.json");
        let mut echo = config.clone();
        echo.out = None;
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: echo,
            input: input_summary(&prepared),
            gypsum: gypsum.as_ref().map(|g| GypsumManifest {
                d: g.d,
                d_source: g.d_source,
                k: g.k,
                k_source: g.k_source,
                hysime: g.subspace.as_ref().map(|s| HysimeTrace {
                    d: s.d,
                    per_direction_cost: s.per_direction_cost.clone(),
                    eigenvalues: s.eigenvalues.clone(),
                }),
                autoencoder: AeSummary {
                    config: g.model.config.clone(),
                    epochs: g.history.epoch_loss.len(),
                    best_epoch: g.history.best_epoch,
                    best_loss: g.history.best_loss,
                    epoch_loss: g.history.epoch_loss.clone(),
                },
                gmm: GmmSummary {
                    iterations: g.gmm.iterations,
                    converged: g.gmm.converged,
                    reseeds: g.gmm.reseeds,
                    log_likelihood: g.gmm.log_likelihood,
                    penalty: g.gmm.penalty,
                    weights: g.gmm.weights.clone(),
                },
                clusters: g.raw_map.k,
                merge: merge_summary(params.lambda, &g.merge),
                final_k: g.map.k,
            }),
            baseline: baseline.as_ref().map(|b| BaselineManifest {
                n_components: b.n_components,
                k: b.k,
                explained_variance: b.pca.explained_variance.to_vec(),
                kmeans_iterations: b.kmeans_iterations,
                inertia: b.inertia,
                clusters: b.raw_map.k,
                merge: merge_summary(params.lambda, &b.merge),
                final_k: b.map.k,
            }),
            outputs: out.names(),
        };
        write_json(&manifest, &manifest_path)?;
        Ok(manifest)
    })?;

    let timings = TimingsFile {
        schema_version: SCHEMA_VERSION,
        stages: timer.stages.clone(),
        total_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&timings, &out.path.join("timings.json"))?;

    Ok(RunOutcome {
        out_dir: out.path.clone(),
        manifest,
        metrics,
        map: gypsum.map(|g| g.map),
        baseline_map: baseline.map(|b| b.map),
        timings: timer.stages,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Supervised {
    pub pixels: usize,
    pub f1: f64,
    pub nmi: f64,
    pub ari: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub k: usize,
    pub labeled_pixels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supervised: Option<Supervised>,
    /// Internal indices over the spectra preprocessed as in the given config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral: Option<MetricsReport>,
}

/// Rescores a saved cluster map against optional truth and, given a run
/// config, on that run's preprocessed spectra.
pub fn evaluate_saved(map_data: &Path, truth_data: Option<&Path>, config: Option<&RunConfig>) -> Result<EvalReport> {
    let map = read_cluster_map(&header_path_for(map_data), map_data)?;
    let truth = truth_data
        .map(|t| read_labels(header_path_for(t), t))
        .transpose()?;
    if let Some(t) = &truth {
        if (t.rows, t.cols) != (map.rows, map.cols) {
            return Err(Error::shape(
                "truth raster dimensions",
                format!("{}x{}", map.rows, map.cols),
                format!("{}x{}", t.rows, t.cols),
            ));
        }
    }
    let supervised = match &truth {
        None => None,
        Some(t) => {
            let (p, g): (Vec<usize>, Vec<usize>) = map
                .labels
                .iter()
                .zip(&t.labels)
                .filter(|(l, c)| **l >= 0 && **c > 0)
                .map(|(l, c)| (*l as usize, *c as usize))
                .unzip();
            if g.is_empty() {
                None
            } else {
                Some(Supervised {
                    pixels: g.len(),
                    f1: metrics::f1_matched(&p, &g)?,
                    nmi: metrics::nmi(&p, &g)?,
                    ari: metrics::ari(&p, &g)?,
                    notes: vec![metrics::NMI_VARIANT.into(), metrics::F1_VARIANT.into()],
                })
            }
        }
    };
    let spectral = match config {
        None => None,
        Some(c) => {
            let mut timer = StageTimer::default();
            let prepared = prepare(c, &mut timer)?;
            let labels = map.pixel_labels(&prepared.matrix)?;
            let truth = truth.as_ref().map(|t| truth_per_pixel(t, &prepared.matrix));
            Some(evaluate(prepared.matrix.spectra().view(), &labels, truth.as_deref(), Space::Spectral)?)
        }
    };
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        k: map.labels.iter().filter(|l| **l >= 0).map(|l| *l as usize).max().map_or(0, |m| m + 1),
        labeled_pixels: map.labeled_count(),
        supervised,
        spectral,
    })
}

/// Files written by [`write_synth_fixture`].
#[derive(Debug, Clone)]
pub struct SynthFixture {
    pub scene: SynthScene,
    pub cube: PathBuf,
    pub labels: PathBuf,
    pub config: PathBuf,
}

/// Generates a scene and writes it as ENVI cube + label raster, with its
/// spec, endmember spectra and a ready-to-run config (`run.toml`).
pub fn write_synth_fixture(spec: &SynthSpec, dir: &Path) -> Result<SynthFixture> {
    let scene = generate(spec)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cube = dir.join("scene.img");
    write_envi(&scene.cube, DataType::F64, Interleave::Bsq, header_path_for(&cube), &cube)?;
    let labels = dir.join("labels.img");
    let mut raster = scene.labels.clone();
    raster.class_names = Some((1..=scene.endmembers.len()).map(|i| format!("endmember_{i}")).collect());
    write_labels(&raster, header_path_for(&labels), &labels)?;

    #[derive(Serialize)]
    struct SynthRecord<'a> {
        schema_version: u32,
        spec: &'a SynthSpec,
        noise_sigma: f64,
        endmember_spectra: Vec<Vec<f64>>,
    }
    write_json(
        &SynthRecord {
            schema_version: SCHEMA_VERSION,
            spec,
            noise_sigma: scene.noise_sigma,
            endmember_spectra: scene.endmember_spectra.rows().into_iter().map(|r| r.to_vec()).collect(),
        },
        &dir.join("synth.json"),
    )?;

    let mut run = RunConfig::new("scene.img");
    run.seed = spec.seed;
    run.out = Some(PathBuf::from("out"));
    run.inputs.labels = Some(PathBuf::from("labels.img"));
    run.preprocess.continuum_removal = Some(false);
    run.postprocess = PostprocessConfig::with_lambda(DEFAULT_LAMBDA);
    run.baseline = BaselineConfig::PcaKmeans {
        n_components: default_components(),
        k: default_baseline_k(),
    };
    let config = dir.join("run.toml");
    fs::write(&config, run.to_toml()?).map_err(|e| Error::io(&config, e))?;
    Ok(SynthFixture {
        scene,
        cube,
        labels,
        config,
    })
}
