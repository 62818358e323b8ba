//! End-to-end experiment drivers behind the `tmx` commands.
//!
//! Directory layout produced by the drivers:
//!
//! ```text
//! gen:      <out>/dataset.{csv,json}  <out>/transmission.{csv,json}  <out>/config.json
//! infer:    <out>/run.json  <out>/<direction>/{trajectory.csv, summary.json, selected/, checkpoint/}
//! validate: <run>/report.json  (plus image_*.csv when an image is given)
//! sweep:    <out>/sigma_<s>/{data,run}/  <out>/sweep.csv  <out>/curves/
//! report:   <dir>/curves/*.csv  <dir>/summary.json
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate, generate_validation, shift_dataset, DatasetConfig, ShiftMode};
use crate::decimation::{run_decimation_with, Criterion, DecimationConfig, DecimationTrajectory, StepRecord, StepResult};
use crate::error::{Error, Result};
use crate::io::{self, Checkpoint, DatasetMeta, MatrixMeta};
use crate::metrics::{self, correlation, extract_t, matrix_inverse, pseudo_unity, MetricsReport, Validation};
use crate::model::{SampleSet, TransmissionSpec};
use crate::optimizer::{BetaInit, OptimizerConfig};
use crate::pseudolikelihood::{l_min_theory_floored, FVariant};

pub const CONFIG_JSON: &str = "config.json";
pub const RUN_JSON: &str = "run.json";
pub const SUMMARY_JSON: &str = "summary.json";
pub const REPORT_JSON: &str = "report.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const CURVES_DIR: &str = "curves";

/// Which channel is inferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Direct,
    Inverse,
    Both,
}

impl Direction {
    /// The single-direction runs this setting expands to.
    pub fn runs(self) -> Vec<Direction> {
        match self {
            Direction::Both => vec![Direction::Direct, Direction::Inverse],
            d => vec![d],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Direct => "direct",
            Direction::Inverse => "inverse",
            Direction::Both => "both",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(Direction::Direct),
            "inverse" => Ok(Direction::Inverse),
            "both" => Ok(Direction::Both),
            _ => Err(Error::InvalidConfig(format!("unknown direction {s:?}"))),
        }
    }
}

/// Noise levels `0, 0.02, ..., 0.5`.
pub fn default_noise_grid() -> Vec<f64> {
    (0..=25).map(|k| f64::from(k) * 2.0 / 100.0).collect()
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub variant: FVariant,
    pub direction: Direction,
    pub optimizer: OptimizerConfig,
    pub fraction: f64,
    pub sigma_guess: f64,
    pub beta_init: BetaInit,
    pub variance_floor: f64,
    pub noise_grid: Vec<f64>,
    pub criteria: Vec<Criterion>,
    /// Seed of the validation patterns; derived from the dataset seed when
    /// absent.
    pub validation_seed: Option<u64>,
    pub validation_samples: usize,
    /// Dataset read by `infer`.
    pub dataset_dir: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let d = DecimationConfig::default();
        Self {
            dataset: DatasetConfig::default(),
            variant: d.variant,
            direction: Direction::Direct,
            optimizer: d.optimizer,
            fraction: d.fraction,
            sigma_guess: d.sigma_guess,
            beta_init: d.beta_init,
            variance_floor: d.variance_floor,
            noise_grid: default_noise_grid(),
            criteria: Criterion::ALL.to_vec(),
            validation_seed: None,
            validation_samples: 1000,
            dataset_dir: None,
            out: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.decimation().validate()?;
        if let Some(bad) = self.noise_grid.iter().find(|&&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(format!("noise level {bad} must be non-negative")));
        }
        if self.criteria.is_empty() {
            return Err(Error::InvalidConfig("at least one criterion must be selected".into()));
        }
        if self.validation_samples == 0 {
            return Err(Error::InvalidConfig("validation_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn decimation(&self) -> DecimationConfig {
        DecimationConfig {
            fraction: self.fraction,
            variant: self.variant,
            optimizer: self.optimizer.clone(),
            sigma_guess: self.sigma_guess,
            beta_init: self.beta_init,
            variance_floor: self.variance_floor,
        }
    }

    pub fn validation_seed(&self) -> u64 {
        self.validation_seed
            .unwrap_or_else(|| self.dataset.seed.wrapping_add(0x9E37_79B9_7F4A_7C15))
    }
}

/// Files written by [`cmd_gen`].
#[derive(Debug, Clone)]
pub struct GenOutput {
    pub spec: TransmissionSpec,
    pub samples: SampleSet,
}

/// Generates a channel and its training samples into `out`.
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<GenOutput> {
    cfg.dataset.validate()?;
    let (spec, samples) = generate(&cfg.dataset)?;
    fs::create_dir_all(out)?;
    let d = &cfg.dataset;
    io::write_dataset(out, &samples, d.w, d.s, d.sigma_noise, d.seed)?;
    io::write_transmission(&out.join(io::TRANSMISSION_STEM), &spec)?;
    io::write_json(&out.join(CONFIG_JSON), cfg)?;
    Ok(GenOutput { spec, samples })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedModel {
    pub step: usize,
    pub k_active: usize,
    pub t_active: usize,
    pub l_value: f64,
}

/// Outcome of one direction of [`cmd_infer`], saved as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub direction: Direction,
    pub m_samples: usize,
    pub c_total: usize,
    pub removal: usize,
    pub l_max: f64,
    pub l_min: f64,
    /// Disconnected-model bound from the generating noise levels; only for
    /// ranges that use shifted data.
    pub l_min_theory: Option<f64>,
    pub selected: BTreeMap<Criterion, SelectedModel>,
    pub steps: Vec<StepResult>,
}

/// Records where an inference run came from, saved as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub dataset_dir: PathBuf,
    pub directions: Vec<Direction>,
}

#[derive(Debug, Clone)]
pub struct InferOutput {
    pub runs: Vec<(RunSummary, DecimationTrajectory)>,
}

#[derive(Serialize)]
struct CheckpointKey<'a> {
    decimation: DecimationConfig,
    direction: Direction,
    dataset: &'a DatasetMeta,
}

/// Per-channel standard deviations of the generating process, in the order
/// of the (possibly swapped) sample layout.
fn channel_sigmas(spec: &TransmissionSpec, sigma_in: f64, sigma_noise: f64, direction: Direction) -> Vec<f64> {
    let h = spec.t.nrows();
    let inputs = vec![sigma_in; h];
    let outputs: Vec<f64> = spec
        .t
        .rows()
        .into_iter()
        .map(|row| (sigma_in * sigma_in * row.iter().map(|t| t * t).sum::<f64>() + sigma_noise * sigma_noise).sqrt())
        .collect();
    match direction {
        Direction::Inverse => [outputs, inputs].concat(),
        _ => [inputs, outputs].concat(),
    }
}

fn prepare_samples(ds: SampleSet, variant: FVariant) -> Result<SampleSet> {
    if variant.requires_shift() && !ds.is_shifted() {
        shift_dataset(&ds, ShiftMode::EmpiricalMean)
    } else {
        Ok(ds)
    }
}

/// Runs decimation on the dataset in `dataset_dir` for every requested
/// direction, resuming from checkpoints left by an interrupted run.
pub fn cmd_infer(cfg: &ExperimentConfig, dataset_dir: &Path, out: &Path) -> Result<InferOutput> {
    cfg.validate()?;
    let (raw, meta) = io::read_dataset(dataset_dir)?;
    let spec_path = dataset_dir.join(io::TRANSMISSION_STEM);
    let spec = if spec_path.with_extension("csv").exists() {
        Some(io::read_transmission(&spec_path)?)
    } else {
        None
    };
    let ds = prepare_samples(raw, cfg.variant)?;
    fs::create_dir_all(out)?;
    let emitted = ExperimentConfig {
        dataset_dir: Some(dataset_dir.to_path_buf()),
        out: out.to_path_buf(),
        ..cfg.clone()
    };
    io::write_json(&out.join(CONFIG_JSON), &emitted)?;
    let directions = cfg.direction.runs();
    io::write_json(
        &out.join(RUN_JSON),
        &RunManifest {
            config: cfg.clone(),
            dataset_dir: dataset_dir.to_path_buf(),
            directions: directions.clone(),
        },
    )?;

    let dcfg = cfg.decimation();
    let mut runs = Vec::new();
    for direction in directions {
        let dir = out.join(direction.name());
        fs::create_dir_all(dir.join("selected"))?;
        let samples = match direction {
            Direction::Inverse => ds.swap_halves(),
            _ => ds.clone(),
        };
        let model_meta = MatrixMeta {
            n: samples.n(),
            w: meta.w,
            s: meta.s,
            sigma: meta.sigma_noise,
            seed: meta.seed,
            shifted: samples.is_shifted(),
            mask_path: None,
        };
        let checkpoint = Checkpoint::new(dir.join(io::CHECKPOINT_DIR));
        let done = checkpoint.open(&CheckpointKey {
            decimation: dcfg.clone(),
            direction,
            dataset: &meta,
        })?;
        if !done.is_empty() {
            log::info!("{direction}: resuming after {} completed steps", done.len());
        }
        let traj = run_decimation_with(&samples, &dcfg, done, |res, m| checkpoint.save(res, m, &model_meta))?;

        io::write_trajectory(&dir.join(io::TRAJECTORY_CSV), &traj)?;
        let mut selected = BTreeMap::new();
        for &c in &cfg.criteria {
            let rec = traj.selected_record(c);
            let model = traj.selected_model(c);
            io::write_model(&dir.join("selected").join(c.name()), model, model_meta.clone())?;
            io::write_matrix(&dir.join("selected").join(format!("{}_T.csv", c.name())), &extract_t(model)?)?;
            selected.insert(
                c,
                SelectedModel {
                    step: rec.step,
                    k_active: rec.k_active,
                    t_active: rec.t_active,
                    l_value: rec.l_value,
                },
            );
        }
        let l_min_theory = match (&spec, samples.is_shifted()) {
            (Some(spec), true) => {
                let sig = channel_sigmas(spec, cfg.dataset.sigma_in, meta.sigma_noise, direction);
                Some(l_min_theory_floored(&samples, &sig, cfg.variant, cfg.variance_floor)?)
            }
            _ => None,
        };
        let summary = RunSummary {
            direction,
            m_samples: traj.m_samples,
            c_total: traj.c_total,
            removal: traj.removal,
            l_max: traj.l_max,
            l_min: traj.l_min,
            l_min_theory,
            selected,
            steps: checkpoint.load()?.into_iter().map(|(r, _)| r).collect(),
        };
        io::write_json(&dir.join(SUMMARY_JSON), &summary)?;
        runs.push((summary, traj));
    }
    Ok(InferOutput { runs })
}

/// Mean of the product's diagonal against its off-diagonal bulk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoUnitySummary {
    pub mean_diagonal: f64,
    pub mean_abs_off_diagonal: f64,
    pub sorted: Vec<f64>,
}

impl PseudoUnitySummary {
    fn of(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Self> {
        let pu = pseudo_unity(a, b)?;
        Ok(Self {
            mean_diagonal: pu.mean_diagonal,
            mean_abs_off_diagonal: pu.mean_abs_off_diagonal,
            sorted: pu.sorted,
        })
    }
}

/// Reconstruction of a user image through both inverse estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub correlation_inverted: Option<f64>,
    pub correlation_direct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub direct_step: Option<usize>,
    pub inverse_step: Option<usize>,
    /// Metrics of the direct estimate against the true channel.
    pub direct: Option<MetricsReport>,
    /// Metrics of the inverse estimate against the inverse of the true
    /// channel, when that inverse exists.
    pub inverse: Option<MetricsReport>,
    pub validation: Validation,
    /// `(T^-1)_inf T_inf`
    pub pseudo_unity_inverse_direct: Option<PseudoUnitySummary>,
    /// `T_inf (T^-1)_inf`
    pub pseudo_unity_direct_inverse: Option<PseudoUnitySummary>,
    pub image: Option<ImageReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunBounds {
    pub l_max: f64,
    pub l_min: f64,
    pub l_min_theory: Option<f64>,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub sigma: f64,
    pub w: usize,
    pub nnz_true: usize,
    pub theta_theory: f64,
    pub validation_seed: u64,
    pub validation_samples: usize,
    pub direct: Option<RunBounds>,
    pub inverse: Option<RunBounds>,
    pub criteria: BTreeMap<Criterion, CriterionReport>,
}

fn load_selected(run_dir: &Path, d: Direction, c: Criterion) -> Result<Option<(usize, crate::CouplingMatrix)>> {
    let dir = run_dir.join(d.name());
    let summary_path = dir.join(SUMMARY_JSON);
    if !summary_path.exists() {
        return Ok(None);
    }
    let summary: RunSummary = io::read_json(&summary_path)?;
    let Some(sel) = summary.selected.get(&c) else {
        return Ok(None);
    };
    let (m, _) = io::read_model(&dir.join("selected").join(c.name()))?;
    Ok(Some((sel.step, m)))
}

fn bounds(run_dir: &Path, d: Direction) -> Result<Option<RunBounds>> {
    let path = run_dir.join(d.name()).join(SUMMARY_JSON);
    if !path.exists() {
        return Ok(None);
    }
    let s: RunSummary = io::read_json(&path)?;
    Ok(Some(RunBounds {
        l_max: s.l_max,
        l_min: s.l_min,
        l_min_theory: s.l_min_theory,
    }))
}

/// A `w x w` grid image with values in `[0, 1]`, flattened row-major.
pub fn read_image(path: &Path, w: usize) -> Result<Array1<f64>> {
    let img = io::read_matrix(path)?;
    if img.dim() != (w, w) {
        return Err(Error::dims(format!("image is {:?}, expected {w}x{w}", img.dim())));
    }
    if img.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::InvalidConfig("image values must lie in [0, 1]".into()));
    }
    Ok(img.iter().copied().collect())
}

fn reconstruct(
    run_dir: &Path,
    tag: &str,
    inverse: Option<Array2<f64>>,
    y: &Array1<f64>,
    x: &Array1<f64>,
    w: usize,
) -> Result<Option<f64>> {
    let Some(inv) = inverse else {
        return Ok(None);
    };
    let xr = inv.dot(y);
    let grid = xr.to_shape((w, w)).map_err(|e| Error::dims(e.to_string()))?.to_owned();
    io::write_matrix(&run_dir.join(format!("image_{tag}.csv")), &grid)?;
    Ok(correlation(x.view(), xr.view()).ok())
}

/// Scores every selected model of an inference run on fresh validation
/// patterns and writes `report.json`.
pub fn cmd_validate(run_dir: &Path, val_seed: Option<u64>, image: Option<&Path>) -> Result<ValidationReport> {
    let manifest_path = run_dir.join(RUN_JSON);
    if !manifest_path.exists() {
        return Err(Error::InvalidConfig(format!("{} is not an inference run directory", run_dir.display())));
    }
    let manifest: RunManifest = io::read_json(&manifest_path)?;
    let cfg = &manifest.config;
    let spec = io::read_transmission(&manifest.dataset_dir.join(io::TRANSMISSION_STEM))?;
    let meta: DatasetMeta = io::read_json(&manifest.dataset_dir.join(io::DATASET_META))?;
    let dcfg = DatasetConfig {
        w: meta.w,
        s: meta.s,
        sigma_noise: meta.sigma_noise,
        seed: meta.seed,
        ..cfg.dataset.clone()
    };
    let seed = val_seed.unwrap_or_else(|| cfg.validation_seed());
    let val = generate_validation(&spec, &dcfg, seed, cfg.validation_samples)?;
    let t_true_inv = matrix_inverse(spec.t.view()).ok().map(|i| i.matrix);

    let image_pair = match image {
        Some(path) => {
            let x = read_image(path, meta.w)?;
            let mut y = spec.t.dot(&x);
            if meta.sigma_noise > 0.0 {
                let noise = Normal::new(0.0, meta.sigma_noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                y.mapv_inplace(|v| v + noise.sample(&mut rng));
            }
            if dcfg.clip {
                y.mapv_inplace(|v| v.clamp(0.0, 1.0));
            }
            Some((x, y))
        }
        None => None,
    };

    let mut criteria = BTreeMap::new();
    for &c in &cfg.criteria {
        let direct = load_selected(run_dir, Direction::Direct, c)?;
        let inverse = load_selected(run_dir, Direction::Inverse, c)?;
        let t_inf = direct.as_ref().map(|(_, m)| extract_t(m)).transpose()?;
        let t_inv_inf = inverse.as_ref().map(|(_, m)| extract_t(m)).transpose()?;
        let direct_metrics = direct
            .as_ref()
            .map(|(_, m)| MetricsReport::build(m, Some(spec.t.view()), t_inv_inf.as_ref().map(|t| t.view())))
            .transpose()?;
        let inverse_metrics = inverse
            .as_ref()
            .map(|(_, m)| MetricsReport::build(m, t_true_inv.as_ref().map(|t| t.view()), None))
            .transpose()?;
        let validation = metrics::validate(
            t_inf.as_ref().map(|t| t.view()),
            t_inv_inf.as_ref().map(|t| t.view()),
            spec.t.view(),
            &val,
        )?;
        let (pu_id, pu_di) = match (&t_inf, &t_inv_inf) {
            (Some(a), Some(b)) => (
                Some(PseudoUnitySummary::of(b.view(), a.view())?),
                Some(PseudoUnitySummary::of(a.view(), b.view())?),
            ),
            _ => (None, None),
        };
        let image = match &image_pair {
            Some((x, y)) => {
                let inverted = t_inf.as_ref().and_then(|t| matrix_inverse(t.view()).ok()).map(|i| i.matrix);
                Some(ImageReport {
                    correlation_inverted: reconstruct(run_dir, &format!("{}_inverted", c.name()), inverted, y, x, meta.w)?,
                    correlation_direct: reconstruct(run_dir, &format!("{}_direct", c.name()), t_inv_inf.clone(), y, x, meta.w)?,
                })
            }
            None => None,
        };
        criteria.insert(
            c,
            CriterionReport {
                direct_step: direct.as_ref().map(|(s, _)| *s),
                inverse_step: inverse.as_ref().map(|(s, _)| *s),
                direct: direct_metrics,
                inverse: inverse_metrics,
                validation,
                pseudo_unity_inverse_direct: pu_id,
                pseudo_unity_direct_inverse: pu_di,
                image,
            },
        );
    }
    let report = ValidationReport {
        sigma: meta.sigma_noise,
        w: meta.w,
        nnz_true: spec.nnz(),
        theta_theory: 2.0 * meta.sigma_noise * meta.sigma_noise,
        validation_seed: seed,
        validation_samples: cfg.validation_samples,
        direct: bounds(run_dir, Direction::Direct)?,
        inverse: bounds(run_dir, Direction::Inverse)?,
        criteria,
    };
    io::write_json(&run_dir.join(REPORT_JSON), &report)?;
    Ok(report)
}

/// Subdirectory name for one noise level of a sweep.
pub fn sigma_dir(sigma: f64) -> String {
    format!("sigma_{sigma:.4}")
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub sigma: f64,
    pub infer: InferOutput,
    pub report: ValidationReport,
}

fn write_long_csv(path: &Path, rows: &[(f64, &StepRecord)]) -> Result<()> {
    let mut text = String::from("sigma,step,K,L,TIC,AIC,AICc,BIC\n");
    for (sigma, r) in rows {
        text.push_str(&format!(
            "{sigma:.16e},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.step, r.k_active, r.l_value, r.tic, r.aic, r.aicc, r.bic
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Runs gen, infer and validate at every noise level of the grid, each in
/// its own subdirectory, then writes the long-format tables and curves.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    if cfg.noise_grid.is_empty() {
        return Err(Error::InvalidConfig("noise grid is empty".into()));
    }
    fs::create_dir_all(out)?;
    io::write_json(&out.join(CONFIG_JSON), cfg)?;
    let points: Vec<SweepPoint> = cfg
        .noise_grid
        .par_iter()
        .map(|&sigma| {
            let dir = out.join(sigma_dir(sigma));
            let data = dir.join("data");
            let run = dir.join("run");
            let mut point_cfg = cfg.clone();
            point_cfg.dataset.sigma_noise = sigma;
            point_cfg.out = data.clone();
            cmd_gen(&point_cfg, &data)?;
            let infer = cmd_infer(&point_cfg, &data, &run)?;
            let report = cmd_validate(&run, None, None)?;
            Ok(SweepPoint { sigma, infer, report })
        })
        .collect::<Result<Vec<_>>>()?;

    for d in cfg.direction.runs() {
        let rows: Vec<(f64, &StepRecord)> = points
            .iter()
            .flat_map(|p| {
                p.infer
                    .runs
                    .iter()
                    .filter(|(s, _)| s.direction == d)
                    .flat_map(move |(_, t)| t.records.iter().map(move |r| (p.sigma, r)))
            })
            .collect();
        let name = match d {
            Direction::Inverse => "sweep_inverse.csv",
            _ => SWEEP_CSV,
        };
        write_long_csv(&out.join(name), &rows)?;
    }
    cmd_report(out)?;
    Ok(points)
}

fn run_reports(dir: &Path) -> Result<Vec<ValidationReport>> {
    if dir.join(REPORT_JSON).exists() {
        return Ok(vec![io::read_json(&dir.join(REPORT_JSON))?]);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("run").join(REPORT_JSON).exists())
        .collect();
    subdirs.sort();
    let mut reports: Vec<ValidationReport> = subdirs
        .iter()
        .map(|p| io::read_json(&p.join("run").join(REPORT_JSON)))
        .collect::<Result<_>>()?;
    reports.sort_by(|a, b| a.sigma.total_cmp(&b.sigma));
    if reports.is_empty() {
        return Err(Error::InvalidConfig(format!("no validation reports found under {}", dir.display())));
    }
    Ok(reports)
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "nan".to_string(), |v| format!("{v:.16e}"))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Aggregates `report.json` files below `dir` into noise-vs-metric tables.
///
/// `dir` is either a single run directory or a sweep directory.
pub fn cmd_report(dir: &Path) -> Result<Vec<ValidationReport>> {
    let reports = run_reports(dir)?;
    let curves = dir.join(CURVES_DIR);
    fs::create_dir_all(&curves)?;

    let mut bounds = String::from("sigma,direction,l_max,l_min,l_min_theory\n");
    let mut temperature = String::from("sigma,criterion,theta,theta_theory,sigma_est_mean,sigma_ratio_mean\n");
    let mut recovery = String::from("sigma,criterion,step,q_error,t_correlation,row_sum_mean,row_sum_std\n");
    let mut validation =
        String::from("sigma,criterion,focusing_direct,focusing_inverted,imaging_inverted,imaging_direct\n");
    let mut unity = String::from("sigma,criterion,order,mean_diagonal,mean_abs_off_diagonal\n");

    for r in &reports {
        for (d, b) in [("direct", &r.direct), ("inverse", &r.inverse)] {
            if let Some(b) = b {
                bounds.push_str(&format!(
                    "{:.16e},{d},{:.16e},{:.16e},{}\n",
                    r.sigma,
                    b.l_max,
                    b.l_min,
                    opt(b.l_min_theory)
                ));
            }
        }
        for (c, cr) in &r.criteria {
            if let Some(m) = &cr.direct {
                let est = mean(&m.sigma_est);
                let ratio = if r.sigma > 0.0 { est / r.sigma } else { f64::NAN };
                temperature.push_str(&format!(
                    "{:.16e},{c},{:.16e},{:.16e},{est:.16e},{ratio:.16e}\n",
                    r.sigma, m.theta, r.theta_theory
                ));
                recovery.push_str(&format!(
                    "{:.16e},{c},{},{},{},{:.16e},{:.16e}\n",
                    r.sigma,
                    cr.direct_step.unwrap_or_default(),
                    opt(m.q_error),
                    opt(m.t_correlation),
                    m.row_sum_mean,
                    m.row_sum_std
                ));
            }
            let v = &cr.validation;
            validation.push_str(&format!(
                "{:.16e},{c},{},{},{},{}\n",
                r.sigma,
                opt(v.focusing_direct.map(|s| s.mean)),
                opt(v.focusing_inverted.map(|s| s.mean)),
                opt(v.imaging_inverted.map(|s| s.mean)),
                opt(v.imaging_direct.map(|s| s.mean))
            ));
            for (order, pu) in [
                ("inverse_direct", &cr.pseudo_unity_inverse_direct),
                ("direct_inverse", &cr.pseudo_unity_direct_inverse),
            ] {
                if let Some(pu) = pu {
                    unity.push_str(&format!(
                        "{:.16e},{c},{order},{:.16e},{:.16e}\n",
                        r.sigma, pu.mean_diagonal, pu.mean_abs_off_diagonal
                    ));
                }
            }
        }
    }
    for (name, text) in [
        ("bounds.csv", bounds),
        ("temperature.csv", temperature),
        ("recovery.csv", recovery),
        ("validation.csv", validation),
        ("pseudo_unity.csv", unity),
    ] {
        fs::write(curves.join(name), text)?;
    }
    io::write_json(&dir.join(SUMMARY_JSON), &reports)?;
    Ok(reports)
}
