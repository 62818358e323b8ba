//! Iterative pruning of the transmission block with warm-started
//! re-optimization, and model selection along the resulting trajectory.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CouplingMatrix, SampleSet};
use crate::optimizer::{init_m0, maximize_objective, BetaInit, OptimizerConfig, StopReason};
use crate::pseudolikelihood::{FVariant, PseudoLikelihood};

/// Default share of all `w^4` transmission entries removed per step.
pub const DEFAULT_FRACTION: f64 = 1.0 / 128.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecimationConfig {
    pub fraction: f64,
    pub variant: FVariant,
    pub optimizer: OptimizerConfig,
    /// Noise level used to set the starting precisions.
    pub sigma_guess: f64,
    pub beta_init: BetaInit,
    /// Variance of independent jitter added to every channel in
    /// expectation; keeps the noiseless problem bounded.
    pub variance_floor: f64,
}

impl Default for DecimationConfig {
    fn default() -> Self {
        Self {
            fraction: DEFAULT_FRACTION,
            variant: FVariant::InfInf,
            optimizer: OptimizerConfig::default(),
            sigma_guess: 0.1,
            beta_init: BetaInit::Variance,
            variance_floor: 1e-6,
        }
    }
}

impl DecimationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("decimation fraction {} outside (0, 1]", self.fraction)));
        }
        if !(self.sigma_guess > 0.0 && self.sigma_guess.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma guess {} must be positive", self.sigma_guess)));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "TIC")]
    Tic,
    #[serde(rename = "AIC")]
    Aic,
    #[serde(rename = "AICc")]
    Aicc,
    #[serde(rename = "BIC")]
    Bic,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Criterion::Tic, Criterion::Aic, Criterion::Aicc, Criterion::Bic];

    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Tic => "TIC",
            Criterion::Aic => "AIC",
            Criterion::Aicc => "AICc",
            Criterion::Bic => "BIC",
        }
    }

    /// Value of this criterion in a record.
    pub fn score(&self, r: &StepRecord) -> f64 {
        match self {
            Criterion::Tic => r.tic,
            Criterion::Aic => r.aic,
            Criterion::Aicc => r.aicc,
            Criterion::Bic => r.bic,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown criterion {s:?}")))
    }
}

/// Raw outcome of one optimization along the schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub step: usize,
    /// Active independent parameters of `M`.
    pub k_active: usize,
    /// Active entries of the transmission block.
    pub t_active: usize,
    /// Maximized objective, variance-floor penalty included.
    pub l_value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub k_active: usize,
    /// Share of transmission entries still active: 1 for the full model,
    /// 0 for the diagonal-only one.
    pub k_frac: f64,
    pub t_active: usize,
    pub l_value: f64,
    pub tic: f64,
    pub aic: f64,
    pub aicc: f64,
    pub bic: f64,
    pub converged: bool,
}

/// `(TIC, AIC, AICc, BIC)`; AICc is `+inf` when `M <= K + 1`.
pub fn criteria(l: f64, k_active: usize, m_samples: usize, k: f64, l_max: f64, l_min: f64) -> (f64, f64, f64, f64) {
    let kk = k_active as f64;
    let m = m_samples as f64;
    let tic = l - k * l_max - (1.0 - k) * l_min;
    let aic = 2.0 * kk - 2.0 * m * l;
    let aicc = if m_samples > k_active + 1 {
        aic + 2.0 * kk * (kk + 1.0) / (m - kk - 1.0)
    } else {
        f64::INFINITY
    };
    let bic = kk * m.ln() - 2.0 * m * l;
    (tic, aic, aicc, bic)
}

/// Transmission entries removed per step: `ceil(fraction * w^4)`.
pub fn removal_count(half: usize, fraction: f64) -> usize {
    let total = (half * half) as f64;
    // guard against 0.5000000001-style round-off pushing the ceiling up
    ((fraction * total - 1e-9).ceil() as usize).max(1)
}

/// Parameters of the full structural model with `half` inputs.
pub fn full_parameter_count(half: usize) -> usize {
    half * half + half * (half + 1) / 2 + half
}

/// Magnitude of the transmission entry `(g, e)` implied by `M`.
fn t_magnitude(m: &CouplingMatrix, g: usize, e: usize) -> Result<f64> {
    let h = m.half();
    let beta = m.a(h + g);
    if !(beta > 0.0) {
        return Err(Error::DegenerateModel(format!("output {g} has beta = {beta}")));
    }
    Ok((m.get(h + g, e) / (2.0 * beta)).abs())
}

/// Removes the `count` smallest active transmission entries and rebuilds
/// the input-block mask.
pub fn decimate_count(m: &CouplingMatrix, count: usize) -> Result<CouplingMatrix> {
    let h = m.half();
    let mut candidates = Vec::new();
    for g in 0..h {
        for e in 0..h {
            if m.is_active(h + g, e) {
                candidates.push((t_magnitude(m, g, e)?, g * h + e));
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::EmptyT);
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = m.clone();
    for &(_, flat) in candidates.iter().take(count) {
        out.set_active(h + flat / h, flat % h, false);
    }
    for e in 0..h {
        for f in 0..e {
            if out.is_active(e, f) && !(0..h).any(|g| out.is_active(h + g, e) && out.is_active(h + g, f)) {
                out.set_active(e, f, false);
            }
        }
    }
    Ok(out)
}

/// One decimation step with the per-step count derived from `fraction`.
pub fn decimate_step(m: &CouplingMatrix, fraction: f64) -> Result<CouplingMatrix> {
    decimate_count(m, removal_count(m.half(), fraction))
}

#[derive(Debug, Clone)]
pub struct DecimationTrajectory {
    pub records: Vec<StepRecord>,
    /// Optimized model of every step.
    pub models: Vec<CouplingMatrix>,
    /// Selected step per criterion.
    pub selected: BTreeMap<Criterion, usize>,
    pub l_max: f64,
    pub l_min: f64,
    pub m_samples: usize,
    pub c_total: usize,
    /// Transmission entries removed per step.
    pub removal: usize,
}

impl DecimationTrajectory {
    /// Fills in the criteria and selections from completed steps.
    pub fn from_steps(steps: Vec<(StepResult, CouplingMatrix)>, m_samples: usize, removal: usize) -> Result<Self> {
        let (first, last) = match (steps.first(), steps.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::InvalidConfig("empty decimation trajectory".into())),
        };
        let c_total = full_parameter_count(first.1.half());
        let l_max = first.0.l_value;
        let l_min = last.0.l_value;
        let t_total = (first.0.t_active as f64).max(1.0);
        let mut records = Vec::with_capacity(steps.len());
        let mut models = Vec::with_capacity(steps.len());
        for (res, model) in steps {
            let k = res.t_active as f64 / t_total;
            let (tic, aic, aicc, bic) = criteria(res.l_value, res.k_active, m_samples, k, l_max, l_min);
            records.push(StepRecord {
                step: res.step,
                k_active: res.k_active,
                k_frac: k,
                t_active: res.t_active,
                l_value: res.l_value,
                tic,
                aic,
                aicc,
                bic,
                converged: res.converged,
            });
            models.push(model);
        }
        let selected = Criterion::ALL
            .into_iter()
            .map(|c| (c, select(&records, c)))
            .collect();
        Ok(Self {
            records,
            models,
            selected,
            l_max,
            l_min,
            m_samples,
            c_total,
            removal,
        })
    }

    pub fn selected_step(&self, c: Criterion) -> usize {
        self.selected[&c]
    }

    pub fn selected_model(&self, c: Criterion) -> &CouplingMatrix {
        &self.models[self.selected[&c]]
    }

    pub fn selected_record(&self, c: Criterion) -> &StepRecord {
        &self.records[self.selected[&c]]
    }

    /// The step-0 (fully connected) optimum.
    pub fn full_model(&self) -> &CouplingMatrix {
        &self.models[0]
    }
}

/// Argmax of TIC, argmin of the rest; ties go to the later step.
fn select(records: &[StepRecord], c: Criterion) -> usize {
    let mut best = 0;
    for (i, r) in records.iter().enumerate() {
        let (s, b) = (c.score(r), c.score(&records[best]));
        let better = match c {
            Criterion::Tic => s >= b,
            _ => s <= b,
        };
        if better {
            best = i;
        }
    }
    best
}

/// Full schedule from the uniform starting point.
pub fn run_decimation(ds: &SampleSet, cfg: &DecimationConfig) -> Result<DecimationTrajectory> {
    run_decimation_with(ds, cfg, Vec::new(), |_, _| Ok(()))
}

/// Runs the schedule, continuing after the steps in `done` and calling
/// `on_step` after each newly completed step.
pub fn run_decimation_with<F>(
    ds: &SampleSet,
    cfg: &DecimationConfig,
    done: Vec<(StepResult, CouplingMatrix)>,
    mut on_step: F,
) -> Result<DecimationTrajectory>
where
    F: FnMut(&StepResult, &CouplingMatrix) -> Result<()>,
{
    cfg.validate()?;
    if cfg.variant.requires_shift() && !ds.is_shifted() {
        return Err(Error::NotShifted);
    }
    let h = ds.half();
    let removal = removal_count(h, cfg.fraction);
    let start = init_m0(ds.n(), cfg.sigma_guess, cfg.beta_init)?;
    let base = PseudoLikelihood::auto(&start, ds, cfg.variant)?.with_floor(cfg.variance_floor)?;

    let mut steps = done;
    for (i, (res, m)) in steps.iter().enumerate() {
        if res.step != i || m.n() != ds.n() {
            return Err(Error::InvalidConfig(format!("checkpoint step {} out of sequence", res.step)));
        }
    }

    loop {
        let step = steps.len();
        let warm = match steps.last() {
            None => start.clone(),
            Some((_, prev)) if prev.t_active() == 0 => break,
            Some((_, prev)) => decimate_count(prev, removal)?,
        };
        let objective = base.with_template(&warm)?;
        let opt = maximize_objective(&objective, &warm.params(), &cfg.optimizer).map_err(|e| {
            Error::OptimizerFailure {
                step,
                reason: e.to_string(),
            }
        })?;
        if !opt.converged {
            log::warn!(
                "step {step}: stopped on {} with gradient norm {:.3e}",
                opt.stop_reason,
                opt.grad_norm
            );
        }
        let res = StepResult {
            step,
            k_active: opt.m.n_active(),
            t_active: opt.m.t_active(),
            l_value: opt.l,
            iterations: opt.iters,
            grad_norm: opt.grad_norm,
            converged: opt.converged,
            stop_reason: opt.stop_reason,
        };
        log::debug!(
            "step {step}: K = {}, T active = {}, L = {:.10e}, {} iterations",
            res.k_active,
            res.t_active,
            res.l_value,
            res.iterations
        );
        on_step(&res, &opt.m)?;
        steps.push((res, opt.m));
    }
    DecimationTrajectory::from_steps(steps, ds.len(), removal)
}

/// Inverse-channel inference: the same pipeline on role-swapped samples.
pub fn infer_inverse(ds: &SampleSet, cfg: &DecimationConfig) -> Result<DecimationTrajectory> {
    run_decimation(&ds.swap_halves(), cfg)
}
