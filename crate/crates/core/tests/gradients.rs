mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{derivative, fd_gradient, gradient_error, random_model, small_dataset, worst_relative_error};
use tmx_core::pseudolikelihood::PseudoLikelihood;
use tmx_core::FVariant;

fn dataset(seed: u64, v: FVariant) -> tmx_core::SampleSet {
    small_dataset(seed, 50, v)
}


#[test]
fn analytic_gradient_matches_finite_differences_for_every_range() {
    let variants = [
        FVariant::InfInf,
        FVariant::ZeroInf,
        FVariant::ZeroOne,
        FVariant::SymUnit { half_width: 1.0 },
        FVariant::SymUnit { half_width: 0.5 },
    ];
    for v in variants {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for inst in 0..20 {
            let ds = dataset(100 + inst, v);
            let m = random_model(&mut rng, 4);
            worst = worst.max(gradient_error(&m, &ds, v));
        }
        assert!(worst <= 1e-6, "{v}: worst relative gradient error {worst:.3e}");
    }
}

#[test]
fn objective_gradient_with_floor_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for v in [FVariant::InfInf, FVariant::ZeroOne] {
        let ds = dataset(7, v);
        let m = random_model(&mut rng, 4);
        let obj = PseudoLikelihood::auto(&m, &ds, v).unwrap().with_floor(1e-3).unwrap();
        let x = m.params();
        let (_, analytic) = obj.value_grad(&x).unwrap();
        let numeric = fd_gradient(|p| obj.value_grad(p).unwrap().0, &x);
        let worst = worst_relative_error(&analytic, &numeric);
        assert!(worst <= 1e-6, "{v}: {worst:.3e}");
    }
}

#[test]
fn moment_path_equals_sample_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..5 {
        let ds = dataset(seed, FVariant::InfInf);
        let m = random_model(&mut rng, 4);
        let x = m.params();
        let by_samples = PseudoLikelihood::from_samples(&m, &ds, FVariant::InfInf).unwrap();
        let by_moments = PseudoLikelihood::from_moments(&m, ds.second_moments()).unwrap();
        let (l1, g1) = by_samples.value_grad(&x).unwrap();
        let (l2, g2) = by_moments.value_grad(&x).unwrap();
        assert!((l1 - l2).abs() <= 1e-10 * l1.abs().max(1.0), "{l1} vs {l2}");
        let scale = g1.iter().fold(1.0f64, |a, g| a.max(g.abs()));
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-10 * scale, "{a} vs {b}");
        }
    }
}

#[test]
fn floor_is_added_variance_on_the_infinite_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ds = dataset(1, FVariant::InfInf);
    let m = random_model(&mut rng, 4);
    let x = m.params();
    let eps = 2e-4;
    let floored = PseudoLikelihood::from_moments(&m, ds.second_moments())
        .unwrap()
        .with_floor(eps)
        .unwrap();
    let mut c = ds.second_moments();
    c.diag_mut().mapv_inplace(|v| v + eps);
    let jittered = PseudoLikelihood::from_moments(&m, c).unwrap();
    let (l1, g1) = floored.value_grad(&x).unwrap();
    let (l2, g2) = jittered.value_grad(&x).unwrap();
    assert!((l1 - l2).abs() <= 1e-11 * l1.abs().max(1.0));
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }
}

#[test]
fn curvature_is_the_negated_hessian_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ds = dataset(2, FVariant::InfInf);
    let m = random_model(&mut rng, 4);
    let obj = PseudoLikelihood::from_moments(&m, ds.second_moments())
        .unwrap()
        .with_floor(1e-4)
        .unwrap();
    let x = m.params();
    let curv = obj.curvature(&x).unwrap();
    for k in 0..x.len() {
        let h = 1e-3 * x[k].abs().max(1e-2);
        let second = -derivative(
            |t| {
                let mut y = x.clone();
                y[k] = t;
                obj.value_grad(&y).unwrap().1[k]
            },
            x[k],
            h,
        );
        assert!(curv[k] > 0.0);
        assert!((curv[k] - second).abs() <= 1e-6 * curv[k], "param {k}: {} vs {second}", curv[k]);
    }
}
