//! Synthetic channels and intensity datasets.
//!
//! A ground-truth channel is a sparse row-stochastic matrix; inputs are
//! truncated-Gaussian pixel intensities; outputs are the channel image plus
//! Gaussian noise, optionally saturated to the camera range `[0, 1]`.

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SampleSet, TransmissionSpec};

const STREAM_TRANSMISSION: u64 = 0;
const STREAM_INPUTS: u64 = 1;
const STREAM_NOISE: u64 = 2;

const MAX_PLACEMENT_ATTEMPTS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub w: usize,
    pub s: f64,
    pub m_samples: usize,
    pub mu_in: f64,
    pub sigma_in: f64,
    pub sigma_noise: f64,
    pub clip: bool,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            w: 4,
            s: 0.2,
            m_samples: 10_000,
            mu_in: 0.5,
            sigma_in: 0.1,
            sigma_noise: 0.0,
            clip: true,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w == 0 {
            return Err(Error::InvalidConfig("w must be positive".into()));
        }
        if !(self.s > 0.0 && self.s <= 1.0) {
            return Err(Error::InvalidConfig(format!("s = {} outside (0, 1]", self.s)));
        }
        if self.m_samples == 0 {
            return Err(Error::InvalidConfig("m_samples must be positive".into()));
        }
        if !(self.mu_in > 0.0 && self.mu_in < 1.0) {
            return Err(Error::InvalidConfig(format!("mu_in = {} outside (0, 1)", self.mu_in)));
        }
        if !(self.sigma_in > 0.0) {
            return Err(Error::InvalidConfig("sigma_in must be positive".into()));
        }
        if !(self.sigma_noise >= 0.0) {
            return Err(Error::InvalidConfig("sigma_noise must be nonnegative".into()));
        }
        Ok(())
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Number of active entries for a `w x w` channel at sparsity `s`.
pub fn active_count(w: usize, s: f64) -> usize {
    let total = (w * w * w * w) as f64;
    (s * total).round() as usize
}

/// Random sparse row-stochastic channel.
///
/// `round(s w^4)` ones are placed uniformly without replacement; placements
/// that leave a row empty are redrawn. Each row is then normalized.
pub fn gen_transmission(w: usize, s: f64, seed: u64) -> Result<TransmissionSpec> {
    if w == 0 || !(s > 0.0 && s <= 1.0) {
        return Err(Error::InvalidConfig(format!("invalid channel size w = {w}, s = {s}")));
    }
    let h = w * w;
    let active = active_count(w, s);
    if active < h {
        return Err(Error::InfeasibleSparsity { active, rows: h });
    }
    let mut rng = rng_for(seed, STREAM_TRANSMISSION);
    let mut attempts = 0;
    let t = loop {
        attempts += 1;
        let mut t = Array2::<f64>::zeros((h, h));
        for flat in index::sample(&mut rng, h * h, active) {
            t[[flat / h, flat % h]] = 1.0;
        }
        let row_sums = t.sum_axis(Axis(1));
        if row_sums.iter().all(|&r| r > 0.0) {
            for (mut row, &r) in t.rows_mut().into_iter().zip(row_sums.iter()) {
                row.mapv_inplace(|x| x / r);
            }
            break t;
        }
        if attempts >= MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::InfeasibleSparsity { active, rows: h });
        }
    };
    let spec = TransmissionSpec {
        w,
        s,
        t,
        sigma: 0.0,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

/// Draws from `Normal(mu, sigma^2)` restricted to `[0, 1]` by rejection.
fn truncated_normal<R: Rng>(rng: &mut R, normal: &Normal<f64>) -> f64 {
    loop {
        let x = normal.sample(rng);
        if (0.0..=1.0).contains(&x) {
            return x;
        }
    }
}

/// `M x w^2` matrix of truncated-Gaussian input patterns.
pub fn sample_inputs(cfg: &DatasetConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    sample_inputs_seeded(cfg, cfg.seed, cfg.m_samples)
}

fn sample_inputs_seeded(cfg: &DatasetConfig, seed: u64, m: usize) -> Result<Array2<f64>> {
    let normal = Normal::new(cfg.mu_in, cfg.sigma_in)
        .map_err(|e| Error::InvalidConfig(format!("input distribution: {e}")))?;
    let mut rng = rng_for(seed, STREAM_INPUTS);
    let h = cfg.w * cfg.w;
    let mut inputs = Array2::zeros((m, h));
    for x in inputs.iter_mut() {
        *x = truncated_normal(&mut rng, &normal);
    }
    Ok(inputs)
}

/// Sends each input row through `T`, adds noise, and saturates if asked.
pub fn propagate(
    t: &TransmissionSpec,
    inputs: &Array2<f64>,
    sigma_noise: f64,
    clip: bool,
    seed: u64,
) -> Result<SampleSet> {
    let h = t.t.nrows();
    if inputs.ncols() != h {
        return Err(Error::dims(format!(
            "inputs have {} pixels, channel expects {h}",
            inputs.ncols()
        )));
    }
    if !(sigma_noise >= 0.0) {
        return Err(Error::InvalidConfig("sigma_noise must be nonnegative".into()));
    }
    let mut outputs = inputs.dot(&t.t.t());
    if sigma_noise > 0.0 {
        let noise = Normal::new(0.0, sigma_noise)
            .map_err(|e| Error::InvalidConfig(format!("noise distribution: {e}")))?;
        let mut rng = rng_for(seed, STREAM_NOISE);
        for y in outputs.iter_mut() {
            *y += noise.sample(&mut rng);
        }
    }
    if clip {
        outputs.mapv_inplace(|y| y.clamp(0.0, 1.0));
    }
    let data = concatenate(Axis(1), &[inputs.view(), outputs.view()])
        .map_err(|e| Error::dims(e.to_string()))?;
    SampleSet::new(data)
}

/// Channel plus training samples for a full configuration.
pub fn generate(cfg: &DatasetConfig) -> Result<(TransmissionSpec, SampleSet)> {
    cfg.validate()?;
    let mut spec = gen_transmission(cfg.w, cfg.s, cfg.seed)?;
    spec.sigma = cfg.sigma_noise;
    let inputs = sample_inputs(cfg)?;
    let samples = propagate(&spec, &inputs, cfg.sigma_noise, cfg.clip, cfg.seed)?;
    Ok((spec, samples))
}

/// Fresh samples through an existing channel, drawn from an independent seed.
pub fn generate_validation(
    spec: &TransmissionSpec,
    cfg: &DatasetConfig,
    seed: u64,
    m: usize,
) -> Result<SampleSet> {
    cfg.validate()?;
    if spec.w != cfg.w {
        return Err(Error::dims("validation config disagrees with channel size"));
    }
    let inputs = sample_inputs_seeded(cfg, seed, m)?;
    propagate(spec, &inputs, cfg.sigma_noise, cfg.clip, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum ShiftMode {
    EmpiricalMean,
    Fixed(f64),
}

/// Subtracts a per-channel offset from every sample.
pub fn shift_dataset(ds: &SampleSet, mode: ShiftMode) -> Result<SampleSet> {
    if ds.is_shifted() {
        return Err(Error::AlreadyShifted);
    }
    let means = match mode {
        ShiftMode::EmpiricalMean => ds.empirical_means(),
        ShiftMode::Fixed(mu) => Array1::from_elem(ds.n(), mu),
    };
    let mut out = ds.clone();
    *out.data_mut() -= &means;
    out.set_shift(means, true);
    Ok(out)
}

/// Adds the recorded offsets back.
pub fn unshift_dataset(ds: &SampleSet) -> Result<SampleSet> {
    if !ds.is_shifted() {
        return Err(Error::NotShifted);
    }
    let mut out = ds.clone();
    let means = ds.channel_means().to_owned();
    *out.data_mut() += &means;
    out.set_shift(Array1::zeros(ds.n()), false);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Connectivity {
    Sparse(f64),
    Complete,
}

/// Measurements per free parameter, `xi = M / K(w)`.
pub fn sampling_ratio(w: usize, m: usize, connectivity: Connectivity) -> f64 {
    let w2 = (w * w) as f64;
    let w4 = w2 * w2;
    let k = match connectivity {
        Connectivity::Sparse(s) => (s + 0.5) * w4 + 1.5 * w2,
        Connectivity::Complete => 1.5 * (w4 + w2),
    };
    m as f64 / k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_channel_is_forced() {
        let t = gen_transmission(1, 1.0, 123).unwrap();
        assert_eq!(t.t, Array2::from_elem((1, 1), 1.0));
    }

    #[test]
    fn dense_channel_is_uniform() {
        let t = gen_transmission(4, 1.0, 5).unwrap();
        assert!(t.t.iter().all(|&x| x == 1.0 / 16.0));
    }

    #[test]
    fn sparse_channel_counts_and_rows() {
        for seed in 0..5 {
            let t = gen_transmission(4, 0.2, seed).unwrap();
            assert_eq!(t.nnz(), 51);
            for row in t.t.rows() {
                let mut sum = 0.0;
                for &x in row {
                    assert!(x >= 0.0);
                    sum += x;
                }
                assert!((sum - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn infeasible_sparsity_rejected() {
        let err = gen_transmission(2, 0.01, 1).unwrap_err();
        assert!(matches!(err, Error::InfeasibleSparsity { active: 0, rows: 4 }));
        assert!(gen_transmission(4, 0.05, 1).is_err());
    }

    #[test]
    fn degenerate_input_spread() {
        let cfg = DatasetConfig {
            sigma_in: 1e-12,
            m_samples: 20,
            ..Default::default()
        };
        let x = sample_inputs(&cfg).unwrap();
        assert!(x.iter().all(|&v| (v - 0.5).abs() < 1e-9));
    }

    #[test]
    fn constant_input_through_stochastic_channel() {
        let t = gen_transmission(3, 0.3, 9).unwrap();
        let inputs = Array2::from_elem((4, 9), 0.5);
        let ds = propagate(&t, &inputs, 0.0, false, 0).unwrap();
        for &y in ds.outputs() {
            assert!((y - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_channel_copies_input() {
        let t = TransmissionSpec {
            w: 2,
            s: 0.25,
            t: Array2::eye(4),
            sigma: 0.0,
            seed: 0,
        };
        let inputs = Array2::from_shape_fn((3, 4), |(i, j)| 0.1 * (i + j) as f64);
        let ds = propagate(&t, &inputs, 0.0, true, 0).unwrap();
        assert_eq!(ds.outputs(), ds.inputs());
    }

    #[test]
    fn fixed_shift_zeroes_constant_data() {
        let ds = SampleSet::new(Array2::from_elem((3, 4), 0.5)).unwrap();
        let sh = shift_dataset(&ds, ShiftMode::Fixed(0.5)).unwrap();
        assert!(sh.data().iter().all(|&x| x == 0.0));
        assert!(matches!(shift_dataset(&sh, ShiftMode::Fixed(0.5)), Err(Error::AlreadyShifted)));
        assert!(matches!(unshift_dataset(&ds), Err(Error::NotShifted)));
    }

    #[test]
    fn table_sampling_ratios() {
        let r = |w, c| sampling_ratio(w, 10_000, c);
        assert_eq!(format!("{:.2}", r(4, Connectivity::Sparse(0.2))), "49.21");
        assert_eq!(format!("{:.2}", r(8, Connectivity::Complete)), "1.60");
        assert_eq!(format!("{:.2}", r(16, Connectivity::Sparse(0.2))), "0.22");
    }
}
