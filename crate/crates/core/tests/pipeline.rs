use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tmx_core::datagen::{generate, shift_dataset, DatasetConfig, ShiftMode};
use tmx_core::decimation::{infer_inverse, run_decimation, run_decimation_with, Criterion, DecimationConfig};
use tmx_core::metrics::correlation;
use tmx_core::SampleSet;

fn small_dataset(sigma: f64, seed: u64) -> SampleSet {
    let cfg = DatasetConfig {
        w: 2,
        s: 0.5,
        m_samples: 2000,
        sigma_noise: sigma,
        seed,
        ..Default::default()
    };
    shift_dataset(&generate(&cfg).unwrap().1, ShiftMode::EmpiricalMean).unwrap()
}

#[test]
fn trajectory_is_nested_and_well_formed() {
    let ds = small_dataset(0.05, 3);
    let traj = run_decimation(&ds, &DecimationConfig::default()).unwrap();
    let first = &traj.records[0];
    let last = traj.records.last().unwrap();
    assert_eq!(first.t_active, 16);
    assert_eq!(last.t_active, 0);
    assert_eq!(first.tic, 0.0);
    assert_eq!(last.tic, 0.0);
    for pair in traj.records.windows(2) {
        assert_eq!(pair[1].step, pair[0].step + 1);
        assert_eq!(pair[0].t_active - pair[1].t_active, traj.removal);
        // nested models cannot beat their parent by more than solver slack
        assert!(pair[1].l_value <= pair[0].l_value + 1e-6);
    }
    for m in &traj.models {
        for i in 0..m.n() {
            assert!(m.a(i) > 0.0);
        }
    }
    for c in Criterion::ALL {
        assert!(traj.selected_step(c) < traj.records.len());
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let ds = small_dataset(0.02, 9);
    let cfg = DecimationConfig::default();
    let mut saved = Vec::new();
    let full = run_decimation_with(&ds, &cfg, Vec::new(), |r, m| {
        saved.push((r.clone(), m.clone()));
        Ok(())
    })
    .unwrap();
    saved.truncate(5);
    let resumed = run_decimation_with(&ds, &cfg, saved, |_, _| Ok(())).unwrap();
    assert_eq!(full.records, resumed.records);
    assert_eq!(full.selected, resumed.selected);
    for (a, b) in full.models.iter().zip(&resumed.models) {
        assert_eq!(a.entries(), b.entries());
    }
}

#[test]
fn inverse_inference_is_the_role_swapped_run() {
    let ds = small_dataset(0.05, 4);
    let cfg = DecimationConfig::default();
    let inv = infer_inverse(&ds, &cfg).unwrap();
    let direct_on_swapped = run_decimation(&ds.swap_halves(), &cfg).unwrap();
    assert_eq!(inv.records, direct_on_swapped.records);
}

#[test]
fn noise_lowers_the_full_model_optimum() {
    let cfg = DecimationConfig::default();
    let clean = run_decimation(&small_dataset(0.0, 6), &cfg).unwrap();
    let noisy = run_decimation(&small_dataset(0.1, 6), &cfg).unwrap();
    assert!(clean.l_max >= noisy.l_max);
}

#[test]
fn permuted_samples_are_uncorrelated() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let len = 20_000;
    let x: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
    let mut y = x.clone();
    y.shuffle(&mut rng);
    let c = correlation(Array1::from(x).view(), Array1::from(y).view()).unwrap();
    assert!(c.abs() <= 3.0 / (len as f64).sqrt(), "{c}");
}
