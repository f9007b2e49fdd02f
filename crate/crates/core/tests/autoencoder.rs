mod common;

use gypsum::autoencoder::{encode_all, sa_loss, sa_loss_grad, train, AeConfig, AeModel};
use gypsum::preprocess::{preprocess, PreprocessConfig};
use gypsum::PixelMatrix;
use ndarray::{concatenate, Array2, Axis};
use rand::Rng;

use common::{rng, scene};

fn small_config(seed: u64) -> AeConfig {
    AeConfig {
        hidden: [8, 6],
        batch_size: 4,
        seed,
        ..AeConfig::new(12, 3)
    }
}

fn batch_loss(model: &AeModel, x: &Array2<f64>) -> f64 {
    let (_, recon) = model.forward_batch(x.view());
    sa_loss(x.view(), recon.view())
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

#[test]
fn analytic_gradients_match_central_differences() {
    const H: f64 = 1e-6;
    let mut checked = 0;
    for seed in 0..60u64 {
        let model = AeModel::new(small_config(seed)).unwrap();
        let mut r = rng(1000 + seed);
        let x = Array2::from_shape_fn((4, 12), |_| r.random_range(0.05..1.0));
        if model.min_hidden_preactivation(x.view()) <= 1e-3 {
            continue;
        }
        // a dead decoder leaves x_hat = 0, where the angle is not differentiable
        let (_, recon) = model.forward_batch(x.view());
        if recon.rows().into_iter().any(|r| r.dot(&r).sqrt() < 1e-6) {
            continue;
        }
        let (loss, grads) = model.loss_and_gradients(x.view());
        assert!((loss - batch_loss(&model, &x)).abs() < 1e-14);
        for (l, g) in grads.iter().enumerate() {
            let n_w = g.weight.len();
            for idx in 0..n_w + g.bias.len() {
                let mut plus = model.clone();
                let mut minus = model.clone();
                let (pp, mm, analytic) = if idx < n_w {
                    let (i, j) = (idx / g.weight.ncols(), idx % g.weight.ncols());
                    (&mut plus.layers[l].weight[[i, j]], &mut minus.layers[l].weight[[i, j]], g.weight[[i, j]])
                } else {
                    let i = idx - n_w;
                    (&mut plus.layers[l].bias[i], &mut minus.layers[l].bias[i], g.bias[i])
                };
                *pp += H;
                *mm -= H;
                let numeric = (batch_loss(&plus, &x) - batch_loss(&minus, &x)) / (2.0 * H);
                assert!(
                    rel_err(analytic, numeric) < 1e-5,
                    "seed {seed} layer {l} param {idx}: {analytic:e} vs {numeric:e}"
                );
            }
        }
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} configurations cleared the ReLU margin");
}

#[test]
fn doubling_input_keeps_loss_and_output_gradient() {
    let mut r = rng(4);
    let x = Array2::from_shape_fn((6, 12), |_| r.random_range(0.05..1.0));
    let recon = Array2::from_shape_fn((6, 12), |_| r.random_range(-0.5..1.0));
    let (l1, g1) = sa_loss_grad(x.view(), recon.view());
    let (l2, g2) = sa_loss_grad((&x * 2.0).view(), recon.view());
    assert!((l1 - l2).abs() < 1e-14);
    assert!((g1 - g2).iter().all(|d| d.abs() < 1e-14));
}

#[test]
fn gradient_vanishes_at_perfect_reconstruction() {
    let mut r = rng(5);
    let x = Array2::from_shape_fn((3, 12), |_| r.random_range(0.05..1.0));
    let (loss, grad) = sa_loss_grad(x.view(), (&x * 3.0).view());
    assert!(loss.abs() < 1e-3);
    assert!(grad.iter().all(|g| g.is_finite() && g.abs() < 1e-10));
}

fn noiseless_three() -> PixelMatrix {
    let s = scene(64, 64, 50, 3, None, 1);
    let cfg = PreprocessConfig {
        continuum_removal: Some(false),
        wl_min: 1000.0,
        wl_max: 2600.0,
        ..PreprocessConfig::lab()
    };
    preprocess(&s.cube, &cfg, None).unwrap()
}

#[test]
fn converges_on_noiseless_three_endmember_scene() {
    let m = noiseless_three();
    assert_eq!((m.p(), m.w()), (4096, 50));
    let cfg = AeConfig {
        seed: 0,
        ..AeConfig::new(50, 3)
    };
    let (model, history) = train(&m, &cfg).unwrap();
    let (_, recon) = model.forward_batch(m.spectra().view());
    let final_loss = sa_loss(m.spectra().view(), recon.view());
    assert!(final_loss < 0.01, "final loss {final_loss}");
    let best = history.best_so_far();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(*best.last().unwrap(), history.best_loss);
}

#[test]
fn same_seed_same_model() {
    let s = scene(16, 16, 20, 3, Some(30.0), 2);
    let m = gypsum::hsi::flatten(&s.cube, None).unwrap();
    let cfg = AeConfig {
        hidden: [16, 8],
        batch_size: 32,
        max_epochs: 15,
        seed: 9,
        ..AeConfig::new(20, 3)
    };
    let (a, ha) = train(&m, &cfg).unwrap();
    let (b, hb) = train(&m, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
}

#[test]
fn duplicate_spectra_share_embeddings() {
    let s = scene(8, 8, 20, 3, Some(30.0), 3);
    let m = gypsum::hsi::flatten(&s.cube, None).unwrap();
    let model = AeModel::new(AeConfig {
        hidden: [16, 8],
        ..AeConfig::new(20, 3)
    })
    .unwrap();
    let doubled = concatenate(Axis(0), &[m.spectra().view(), m.spectra().view()]).unwrap();
    let z = encode_all(&model, &PixelMatrix::from_spectra(doubled).unwrap()).unwrap();
    assert_eq!(z.p(), 2 * m.p());
    let (top, bottom) = z.z.view().split_at(Axis(0), m.p());
    assert_eq!(top, bottom);
}
