#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use tmx_core::datagen::{generate, shift_dataset, DatasetConfig, ShiftMode};
use tmx_core::model::assemble_m;
use tmx_core::pseudolikelihood::{eval_total_l, grad_l};
use tmx_core::{CouplingMatrix, FVariant, SampleSet};

/// Richardson-extrapolated central difference, fourth order in `h`.
pub fn derivative<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let h = 1e-3 * x[k].abs().max(1e-2);
            derivative(
                |t| {
                    let mut y = x.to_vec();
                    y[k] = t;
                    f(&y)
                },
                x[k],
                h,
            )
        })
        .collect()
}

/// Largest per-coordinate relative error; coordinates far below the
/// gradient's scale are compared against a thousandth of that scale.
pub fn worst_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3 * scale))
        .fold(0.0, f64::max)
}

/// `w = 2` samples, shifted when the range needs it.
pub fn small_dataset(seed: u64, m_samples: usize, v: FVariant) -> SampleSet {
    let cfg = DatasetConfig {
        w: 2,
        s: 0.5,
        m_samples,
        sigma_noise: 0.05,
        seed,
        ..Default::default()
    };
    let (_, ds) = generate(&cfg).unwrap();
    if v.requires_shift() {
        shift_dataset(&ds, ShiftMode::EmpiricalMean).unwrap()
    } else {
        ds
    }
}

/// A random point near a physical model, with every active entry jittered
/// so the input block is not exactly `T^T diag(beta) T`.
pub fn random_model(rng: &mut ChaCha8Rng, h: usize) -> CouplingMatrix {
    let mut t = Array2::from_shape_fn((h, h), |_| rng.random::<f64>());
    for mut row in t.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|x| x / s);
    }
    let beta = Array1::from_shape_fn(h, |_| rng.random_range(5.0..50.0));
    let mut m = assemble_m(t.view(), beta.view()).unwrap();
    let params: Vec<f64> = m
        .params()
        .iter()
        .map(|&p| p * (1.0 + rng.random_range(-0.1..0.1)))
        .collect();
    m.set_params(&params).unwrap();
    m
}

/// Worst relative error of the analytic gradient of `L` at `m`.
pub fn gradient_error(m: &CouplingMatrix, ds: &SampleSet, v: FVariant) -> f64 {
    let analytic = grad_l(m, ds, v).unwrap();
    let numeric = fd_gradient(
        |p| {
            let mut mm = m.clone();
            mm.set_params(p).unwrap();
            eval_total_l(&mm, ds, v).unwrap()
        },
        &m.params(),
    );
    worst_relative_error(&analytic, &numeric)
}
