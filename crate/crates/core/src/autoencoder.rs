//! Per-image fully connected autoencoder trained with Adam under a
//! spectral-angle reconstruction loss.
//!
//! Layout: `w -> h1 -> h2 -> d` (encoder) and `d -> h2 -> h1 -> w` (decoder),
//! ReLU after every hidden layer, linear embedding and reconstruction layers.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::PixelMatrix;

/// Cosine clamp used by the loss so its gradient stays finite at perfect
/// reconstruction; induces a loss floor of `acos(1 - 1e-7)` ~ 4.5e-4 rad.
pub const COS_CLAMP: f64 = 1.0 - 1e-7;
/// Reconstruction norms below this are treated as this value.
pub const MIN_RECON_NORM: f64 = 1e-12;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub const CHECKPOINT_FORMAT: &str = "gypsum-autoencoder";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeConfig {
    pub input_dim: usize,
    pub embed_dim: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: [usize; 2],
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_rel_improvement: f64,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            input_dim: 0,
            embed_dim: 0,
            hidden: [128, 64],
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 200,
            patience: 10,
            min_rel_improvement: 1e-4,
            seed: 0,
        }
    }
}

impl AeConfig {
    pub fn new(input_dim: usize, embed_dim: usize) -> Self {
        Self {
            input_dim,
            embed_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, d) = (self.input_dim, self.embed_dim);
        if d == 0 || d >= w {
            return Err(Error::config(format!(
                "embedding size d = {d} must satisfy 1 <= d < w = {w}"
            )));
        }
        if self.hidden.iter().any(|&h| h < d) {
            return Err(Error::config(format!(
                "hidden widths {:?} must be >= d = {d}",
                self.hidden
            )));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::config("batch_size and learning_rate must be positive"));
        }
        Ok(())
    }

    /// `(in, out)` of each of the six layers.
    fn layer_dims(&self) -> [(usize, usize); 6] {
        let (w, d) = (self.input_dim, self.embed_dim);
        let [h1, h2] = self.hidden;
        [(w, h1), (h1, h2), (h2, d), (d, h2), (h2, h1), (h1, w)]
    }
}

/// Affine layer `y = x W^T + b` on row-batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Kaiming-style uniform fan-in init, zero bias.
    fn kaiming(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / input as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((output, input), || rng.random_range(-bound..bound)),
            bias: Array1::zeros(output),
        }
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    fn shape_like(&self) -> Self {
        Self::zeros(self.weight.ncols(), self.weight.nrows())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Dense>,
    pub second: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeModel {
    pub config: AeConfig,
    /// Encoder layers `0..3`, decoder layers `3..6`.
    pub layers: Vec<Dense>,
    pub adam: AdamState,
}

/// Activations of one forward pass over a batch.
struct Trace {
    /// Input of each layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Array2<f64>>,
}

fn is_hidden(layer: usize) -> bool {
    !matches!(layer, 2 | 5)
}

fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| v.max(0.0))
}

impl AeModel {
    /// Randomly initialized model.
    pub fn new(config: AeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers: Vec<Dense> = config
            .layer_dims()
            .iter()
            .map(|&(i, o)| Dense::kaiming(i, o, &mut rng))
            .collect();
        Ok(Self::with_layers(config, layers))
    }

    /// Model with all weights and biases zero.
    pub fn zeros(config: AeConfig) -> Result<Self> {
        config.validate()?;
        let layers = config.layer_dims().iter().map(|&(i, o)| Dense::zeros(i, o)).collect();
        Ok(Self::with_layers(config, layers))
    }

    pub fn with_layers(config: AeConfig, layers: Vec<Dense>) -> Self {
        let adam = AdamState {
            step: 0,
            first: layers.iter().map(Dense::shape_like).collect(),
            second: layers.iter().map(Dense::shape_like).collect(),
        };
        Self {
            config,
            layers,
            adam,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn trace(&self, x: ArrayView2<'_, f64>) -> Trace {
        let mut inputs = Vec::with_capacity(6);
        let mut pre = Vec::with_capacity(6);
        let mut current = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let a = layer.apply(current.view());
            inputs.push(current);
            current = if is_hidden(i) { relu(&a) } else { a.clone() };
            pre.push(a);
        }
        Trace { inputs, pre }
    }

    /// Row-batch forward pass: `(z, x_hat)`.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let mut t = self.trace(x);
        let recon = t.pre.pop().expect("six layers");
        let z = t.inputs.swap_remove(3);
        (z, recon)
    }

    /// Single-spectrum forward pass.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let (z, r) = self.forward_batch(view);
        (z.into_raw_vec_and_offset().0, r.into_raw_vec_and_offset().0)
    }

    pub fn encode_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut current = x.to_owned();
        for (i, layer) in self.layers[..3].iter().enumerate() {
            let a = layer.apply(current.view());
            current = if is_hidden(i) { relu(&a) } else { a };
        }
        current
    }

    /// Mean spectral-angle loss of a batch and the gradient of that mean with
    /// respect to every layer. ReLU derivative at 0 is taken as 0.
    pub fn loss_and_gradients(&self, x: ArrayView2<'_, f64>) -> (f64, Vec<Dense>) {
        let t = self.trace(x);
        let recon = &t.pre[5];
        let (loss, mut delta) = sa_loss_grad(x, recon.view());

        let mut grads: Vec<Dense> = self.layers.iter().map(Dense::shape_like).collect();
        for i in (0..6).rev() {
            if is_hidden(i) {
                delta.zip_mut_with(&t.pre[i], |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            grads[i].weight = delta.t().dot(&t.inputs[i]);
            grads[i].bias = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&self.layers[i].weight);
            }
        }
        (loss, grads)
    }

    /// Magnitude of the smallest hidden-layer pre-activation over a batch.
    pub fn min_hidden_preactivation(&self, x: ArrayView2<'_, f64>) -> f64 {
        let t = self.trace(x);
        (0..6)
            .filter(|&i| is_hidden(i))
            .flat_map(|i| t.pre[i].iter().map(|v| v.abs()).collect::<Vec<_>>())
            .fold(f64::INFINITY, f64::min)
    }

    fn adam_step(&mut self, grads: &[Dense]) {
        let lr = self.config.learning_rate;
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let layer = &mut self.layers[i];
            let m = &mut self.adam.first[i];
            let v = &mut self.adam.second[i];
            update(&mut layer.weight, &mut m.weight, &mut v.weight, &g.weight, lr, c1, c2);
            update_1d(&mut layer.bias, &mut m.bias, &mut v.bias, &g.bias, lr, c1, c2);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        let text = serde_json::to_string(&ckpt).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::parse("checkpoint", e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::parse(
                "checkpoint",
                format!("unsupported format {} v{}", ckpt.format, ckpt.version),
            ));
        }
        let dims = ckpt.model.config.layer_dims();
        let consistent = ckpt.model.layers.len() == 6
            && ckpt
                .model
                .layers
                .iter()
                .zip(dims)
                .all(|(l, (i, o))| l.weight.dim() == (o, i) && l.bias.len() == o);
        if !consistent {
            return Err(Error::parse("checkpoint", "layer shapes do not match the config"));
        }
        Ok(ckpt.model)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: AeModel,
}

fn update(
    p: &mut Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    g: &Array2<f64>,
    lr: f64,
    c1: f64,
    c2: f64,
) {
    ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
        adam_scalar(p, m, v, g, lr, c1, c2);
    });
}

fn update_1d(
    p: &mut Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    g: &Array1<f64>,
    lr: f64,
    c1: f64,
    c2: f64,
) {
    ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
        adam_scalar(p, m, v, g, lr, c1, c2);
    });
}

#[inline]
fn adam_scalar(p: &mut f64, m: &mut f64, v: &mut f64, g: f64, lr: f64, c1: f64, c2: f64) {
    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
}

/// Clamped cosine between `x` and `recon` plus its partial derivative
/// `d acos(cos) / d recon` (zero where the clamp is active).
fn angle_and_grad(x: &[f64], recon: &[f64], grad: &mut [f64]) -> f64 {
    let mut dot = 0.0;
    let mut nx2 = 0.0;
    let mut nr2 = 0.0;
    for (a, b) in x.iter().zip(recon) {
        dot += a * b;
        nx2 += a * a;
        nr2 += b * b;
    }
    let nx = nx2.sqrt();
    let nr = nr2.sqrt().max(MIN_RECON_NORM);
    let cos = dot / (nx * nr);
    let clamped = cos.clamp(-COS_CLAMP, COS_CLAMP);
    if clamped != cos {
        grad.iter_mut().for_each(|g| *g = 0.0);
    } else {
        let dacos = -1.0 / (1.0 - cos * cos).sqrt();
        for ((g, a), b) in grad.iter_mut().zip(x).zip(recon) {
            *g = dacos * (a / (nx * nr) - cos * b / (nr * nr));
        }
    }
    clamped.acos()
}

/// Mean spectral angle between rows of `x` and `recon`, with the clamp and
/// small-norm safeguards of the training loss.
pub fn sa_loss(x: ArrayView2<'_, f64>, recon: ArrayView2<'_, f64>) -> f64 {
    sa_loss_grad(x, recon).0
}

/// Mean loss and its gradient with respect to `recon`.
pub fn sa_loss_grad(x: ArrayView2<'_, f64>, recon: ArrayView2<'_, f64>) -> (f64, Array2<f64>) {
    let n = x.nrows();
    let mut grad = Array2::zeros(recon.dim());
    let mut total = 0.0;
    for ((xr, rr), mut gr) in x.rows().into_iter().zip(recon.rows()).zip(grad.rows_mut()) {
        let xs = xr.to_vec();
        let rs = rr.to_vec();
        let g = gr.as_slice_mut().expect("contiguous row");
        total += angle_and_grad(&xs, &rs, g);
    }
    grad /= n as f64;
    (total / n as f64, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss of every epoch run.
    pub epoch_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_loss: f64,
}

impl TrainHistory {
    /// Running minimum of the epoch losses.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.epoch_loss
            .iter()
            .scan(f64::INFINITY, |best, &l| {
                *best = best.min(l);
                Some(*best)
            })
            .collect()
    }
}

/// Minibatch Adam training on the rows of `matrix`; returns the model from
/// the lowest-loss epoch.
pub fn train(matrix: &PixelMatrix, config: &AeConfig) -> Result<(AeModel, TrainHistory)> {
    config.validate()?;
    if matrix.w() != config.input_dim {
        return Err(Error::shape("autoencoder input width", config.input_dim, matrix.w()));
    }
    let p = matrix.p();
    if p < config.batch_size {
        return Err(Error::domain(format!(
            "training needs at least batch_size = {} pixels, got {p}",
            config.batch_size
        )));
    }
    let x = matrix.spectra();
    let mut model = AeModel::new(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_ba7c4e5);
    let mut order: Vec<usize> = (0..p).collect();
    let mut batch = Array2::zeros((config.batch_size, matrix.w()));

    let mut history = TrainHistory {
        epoch_loss: Vec::new(),
        best_epoch: 0,
        best_loss: f64::INFINITY,
    };
    let mut best_model = model.clone();
    let mut reference = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut view = batch.slice_mut(ndarray::s![..chunk.len(), ..]);
            for (dst, &src) in view.rows_mut().into_iter().zip(chunk) {
                let mut dst = dst;
                dst.assign(&x.row(src));
            }
            let (loss, grads) = model.loss_and_gradients(batch.slice(ndarray::s![..chunk.len(), ..]));
            if !loss.is_finite() {
                return Err(Error::numerical(format!("autoencoder loss diverged at epoch {epoch}")));
            }
            total += loss * chunk.len() as f64;
            model.adam_step(&grads);
        }
        let epoch_loss = total / p as f64;
        history.epoch_loss.push(epoch_loss);
        if epoch_loss < history.best_loss {
            history.best_loss = epoch_loss;
            history.best_epoch = epoch;
            best_model = model.clone();
        }
        if epoch_loss < reference * (1.0 - config.min_rel_improvement) {
            reference = epoch_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok((best_model, history))
}

/// Per-pixel embedding, row `i` belonging to pixel `origin[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub z: Array2<f64>,
    pub origin: Vec<(usize, usize)>,
}

impl Embedding {
    pub fn p(&self) -> usize {
        self.z.nrows()
    }

    pub fn d(&self) -> usize {
        self.z.ncols()
    }
}

pub fn encode_all(model: &AeModel, matrix: &PixelMatrix) -> Result<Embedding> {
    if matrix.w() != model.input_dim() {
        return Err(Error::shape("autoencoder input width", model.input_dim(), matrix.w()));
    }
    let mut z = Array2::zeros((matrix.p(), model.embed_dim()));
    const CHUNK: usize = 4096;
    let x = matrix.spectra();
    for start in (0..matrix.p()).step_by(CHUNK) {
        let end = (start + CHUNK).min(matrix.p());
        let enc = model.encode_batch(x.slice(ndarray::s![start..end, ..]));
        z.slice_mut(ndarray::s![start..end, ..]).assign(&enc);
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite embedding"));
    }
    Ok(Embedding {
        z,
        origin: matrix.origin().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::f64::consts::FRAC_PI_4;

    fn small_config() -> AeConfig {
        AeConfig {
            input_dim: 12,
            embed_dim: 3,
            hidden: [8, 6],
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = AeModel::zeros(small_config()).unwrap();
        let (z, r) = m.forward(&[0.3; 12]);
        assert!(z.iter().all(|v| *v == 0.0) && z.len() == 3);
        assert!(r.iter().all(|v| *v == 0.0) && r.len() == 12);
    }

    #[test]
    fn shapes_for_paper_scale_input() {
        let m = AeModel::new(AeConfig::new(249, 20)).unwrap();
        let (z, r) = m.forward(&vec![0.1; 249]);
        assert_eq!((z.len(), r.len()), (20, 249));
    }

    #[test]
    fn identity_construction_reconstructs() {
        // d = w is not a valid training config, so build the layers directly.
        let w = 4;
        let config = AeConfig {
            input_dim: w,
            embed_dim: w,
            hidden: [w, w],
            ..Default::default()
        };
        let eye = Dense {
            weight: Array2::eye(w),
            bias: Array1::zeros(w),
        };
        let m = AeModel::with_layers(config, vec![eye.clone(); 6]);
        let x = [0.1, 0.5, 0.0, 2.0];
        let (z, r) = m.forward(&x);
        assert_eq!(z, x.to_vec());
        assert_eq!(r, x.to_vec());
    }

    #[test]
    fn loss_examples() {
        let x = array![[0.2, 0.4, 0.1]];
        assert!(sa_loss(x.view(), x.view()) < 5e-4);
        assert!(sa_loss(x.view(), (&x * 3.0).view()) < 5e-4);
        let l = sa_loss(array![[1.0, 0.0]].view(), array![[1.0, 1.0]].view());
        assert!((l - FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn loss_floor_and_finite_gradient_at_perfect_reconstruction() {
        let x = array![[0.2, 0.4, 0.1], [1.0, 0.0, 0.0]];
        let (l, g) = sa_loss_grad(x.view(), x.view());
        assert!((l - COS_CLAMP.acos()).abs() < 1e-12);
        assert!(g.iter().all(|v| v.is_finite() && v.abs() < 1e-10));

        let zero = Array2::zeros((1, 3));
        let (l, g) = sa_loss_grad(array![[1.0, 2.0, 3.0]].view(), zero.view());
        assert!(l.is_finite() && g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn loss_magnitude_invariant() {
        let x = array![[0.3, 0.2, 0.9, 0.4]];
        let r = array![[0.1, 0.5, 0.7, 0.2]];
        for c in [1e-3, 0.5, 2.0, 1e4] {
            let a = sa_loss(x.view(), r.view());
            let b = sa_loss(x.view(), (&r * c).view());
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = AeModel::new(small_config()).unwrap();
        m.save(&path).unwrap();
        assert_eq!(AeModel::load(&path).unwrap(), m);

        std::fs::write(&path, "{\"format\":\"other\",\"version\":1}").unwrap();
        assert!(AeModel::load(&path).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AeConfig::new(10, 10).validate().is_err());
        assert!(AeConfig { hidden: [2, 64], ..AeConfig::new(50, 5) }.validate().is_err());
        assert!(AeConfig::new(50, 5).validate().is_ok());
    }

    #[test]
    fn encode_all_rows() {
        let m = AeModel::new(small_config()).unwrap();
        let spectra = Array2::from_shape_fn((3, 12), |(i, j)| if i == 2 { ((j % 3) + 1) as f64 } else { ((j % 3) + 1) as f64 * 0.7 + i as f64 * 0.01 * j as f64 });
        let mut rows = spectra.clone();
        rows.row_mut(1).assign(&spectra.row(0));
        let matrix = PixelMatrix::from_spectra(rows).unwrap();
        let emb = encode_all(&m, &matrix).unwrap();
        assert_eq!(emb.p(), 3);
        assert_eq!(emb.z.row(0), emb.z.row(1));

        let single = PixelMatrix::from_spectra(spectra.slice(ndarray::s![..1, ..]).to_owned()).unwrap();
        assert_eq!(encode_all(&m, &single).unwrap().p(), 1);
    }
}
