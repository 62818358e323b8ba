//! Limited-memory BFGS ascent on the pseudolikelihood.
//!
//! The optimizer minimizes `-L` over the active independent entries of `M`.
//! Trial points where some `A_i <= 0` have no finite pseudolikelihood; the
//! line search treats them as `+inf` and backs off.

use std::collections::VecDeque;
use std::fmt;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{assemble_m, CouplingMatrix, SampleSet};
use crate::pseudolikelihood::{FVariant, PseudoLikelihood};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Number of stored curvature pairs.
    pub memory: usize,
    /// Stop once the largest gradient component is at most this.
    pub grad_tol: f64,
    /// Stop once the relative objective change stays below this...
    pub rel_tol: f64,
    /// ...for this many consecutive iterations.
    pub rel_window: usize,
    pub max_iters: usize,
    /// Sufficient-decrease constant of the Wolfe conditions.
    pub c1: f64,
    /// Curvature constant of the Wolfe conditions.
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_evals: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-6,
            rel_tol: 1e-10,
            rel_window: 3,
            max_iters: 2000,
            c1: 1e-4,
            c2: 0.9,
            max_evals: 40,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.memory > 0
            && self.grad_tol >= 0.0
            && self.rel_tol >= 0.0
            && self.rel_window > 0
            && 0.0 < self.c1
            && self.c1 < self.c2
            && self.c2 < 1.0
            && self.max_evals > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    RelativeChange,
    MaxIterations,
    LineSearchFailure,
    /// No free parameters.
    Trivial,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StopReason::GradientTolerance => "gradient_tolerance",
            StopReason::RelativeChange => "relative_change",
            StopReason::MaxIterations => "max_iterations",
            StopReason::LineSearchFailure => "line_search_failure",
            StopReason::Trivial => "trivial",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub m: CouplingMatrix,
    /// Pseudolikelihood at `m`.
    pub l: f64,
    pub iters: usize,
    /// Max-norm of the gradient at `m`.
    pub grad_norm: f64,
    /// True when the gradient tolerance was reached.
    pub converged: bool,
    pub stop_reason: StopReason,
}

/// How the initial precision `beta_0` follows from the guessed noise level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaInit {
    /// `1 / (2 sigma^2)`
    #[default]
    Variance,
    /// `1 / (2 sigma)`
    Literal,
}

/// Uniform starting point: every transmission entry `1/w^2`, every precision
/// `beta_0`, all structural couplings active.
pub fn init_m0(n: usize, sigma_guess: f64, beta: BetaInit) -> Result<CouplingMatrix> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::dims(format!("model size {n} must be even and positive")));
    }
    if !(sigma_guess > 0.0 && sigma_guess.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma guess {sigma_guess} must be positive")));
    }
    let h = n / 2;
    let beta0 = match beta {
        BetaInit::Variance => 1.0 / (2.0 * sigma_guess * sigma_guess),
        BetaInit::Literal => 1.0 / (2.0 * sigma_guess),
    };
    let t = Array2::from_elem((h, h), 1.0 / h as f64);
    assemble_m(t.view(), Array1::from_elem(h, beta0).view())
}

/// Maximizes the pseudolikelihood starting from `m0`, keeping the mask of
/// `m0` fixed.
pub fn maximize(
    m0: &CouplingMatrix,
    ds: &SampleSet,
    variant: FVariant,
    cfg: &OptimizerConfig,
) -> Result<OptimResult> {
    if variant.requires_shift() && !ds.is_shifted() {
        return Err(Error::NotShifted);
    }
    let objective = PseudoLikelihood::auto(m0, ds, variant)?;
    maximize_objective(&objective, &m0.params(), cfg)
}

/// L-BFGS on a prepared objective from the packed starting point `x0`.
pub fn maximize_objective(
    objective: &PseudoLikelihood<'_>,
    x0: &[f64],
    cfg: &OptimizerConfig,
) -> Result<OptimResult> {
    cfg.validate()?;
    if x0.len() != objective.dim() {
        return Err(Error::dims(format!("{} start values for {} parameters", x0.len(), objective.dim())));
    }
    let eval = |x: &[f64]| -> Result<Option<(f64, Vec<f64>)>> {
        match objective.value_grad(x) {
            Ok((l, g)) => Ok(Some((-l, g.into_iter().map(|v| -v).collect()))),
            Err(e) if e.is_numerical() => Ok(None),
            Err(e) => Err(e),
        }
    };

    let mut x = x0.to_vec();
    let (mut f, mut g) = eval(&x)?.ok_or_else(|| Error::NonPositiveA {
        site: first_bad_site(objective, x0),
        value: f64::NAN,
    })?;
    let finish = |x: Vec<f64>, f: f64, g: &[f64], iters: usize, reason: StopReason| -> Result<OptimResult> {
        let grad_norm = max_norm(g);
        Ok(OptimResult {
            m: objective.model(&x)?,
            l: -f,
            iters,
            grad_norm,
            converged: grad_norm <= cfg.grad_tol,
            stop_reason: reason,
        })
    };
    if x.is_empty() {
        return finish(x, f, &g, 0, StopReason::Trivial);
    }

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut small_changes = 0usize;
    for iter in 0..cfg.max_iters {
        if max_norm(&g) <= cfg.grad_tol {
            return finish(x, f, &g, iter, StopReason::GradientTolerance);
        }
        let h0 = inverse_curvature(objective, &x);
        let mut d = two_loop(&g, &history, &h0);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d = g.iter().zip(&h0).map(|(v, h)| -v * h).collect();
            slope = dot(&g, &d);
        }
        let alpha0 = 1.0;
        let step = line_search(&eval, &x, f, slope, &d, alpha0, cfg)?;
        let Some(step) = step else {
            if history.is_empty() {
                log::debug!("line search failed along steepest descent at iteration {iter}");
                return finish(x, f, &g, iter, StopReason::LineSearchFailure);
            }
            history.clear();
            continue;
        };

        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s) {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        } else {
            history.clear();
        }

        let rel = (f - step.f).abs() / f.abs().max(step.f.abs()).max(1.0);
        x = step.x;
        f = step.f;
        g = step.g;
        if rel <= cfg.rel_tol {
            small_changes += 1;
            if small_changes >= cfg.rel_window {
                let reason = if max_norm(&g) <= cfg.grad_tol {
                    StopReason::GradientTolerance
                } else {
                    StopReason::RelativeChange
                };
                return finish(x, f, &g, iter + 1, reason);
            }
        } else {
            small_changes = 0;
        }
    }
    let reason = if max_norm(&g) <= cfg.grad_tol {
        StopReason::GradientTolerance
    } else {
        StopReason::MaxIterations
    };
    finish(x, f, &g, cfg.max_iters, reason)
}

fn first_bad_site(objective: &PseudoLikelihood<'_>, x: &[f64]) -> usize {
    objective
        .model(x)
        .ok()
        .and_then(|m| (0..m.n()).find(|&i| !(m.a(i) > 0.0)))
        .unwrap_or(0)
}

/// Diagonal starting inverse Hessian from the objective's curvature
/// estimate; falls back to the identity where the estimate is unusable.
fn inverse_curvature(objective: &PseudoLikelihood<'_>, x: &[f64]) -> Vec<f64> {
    match objective.curvature(x) {
        Ok(h) => h
            .into_iter()
            .map(|v| if v > 0.0 && v.is_finite() { 1.0 / v } else { 1.0 })
            .collect(),
        Err(_) => vec![1.0; x.len()],
    }
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, h0: &[f64]) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        axpy(-a, y, &mut q);
        alphas.push(a);
    }
    let gamma = match history.back() {
        Some((s, y, _)) => {
            let yhy: f64 = y.iter().zip(h0).map(|(v, h)| v * v * h).sum();
            dot(s, y) / yhy
        }
        None => 1.0,
    };
    for (v, h) in q.iter_mut().zip(h0) {
        *v *= gamma * h;
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        axpy(a - b, s, &mut q);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct Step {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

struct Trial {
    alpha: f64,
    f: f64,
    slope: f64,
    g: Vec<f64>,
}

/// Strong-Wolfe bracketing and zoom. Returns `None` when no acceptable point
/// was found within the evaluation budget; the best decreasing point found is
/// returned instead when there is one.
fn line_search<E>(
    eval: &E,
    x: &[f64],
    f0: f64,
    slope0: f64,
    d: &[f64],
    alpha0: f64,
    cfg: &OptimizerConfig,
) -> Result<Option<Step>>
where
    E: Fn(&[f64]) -> Result<Option<(f64, Vec<f64>)>>,
{
    let point = |alpha: f64| -> Vec<f64> { x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect() };
    let try_at = |alpha: f64| -> Result<Option<Trial>> {
        Ok(eval(&point(alpha))?.map(|(f, g)| Trial {
            alpha,
            f,
            slope: dot(&g, d),
            g,
        }))
    };
    let armijo = |t: &Trial| t.f <= f0 + cfg.c1 * t.alpha * slope0;
    let curvature = |t: &Trial| t.slope.abs() <= -cfg.c2 * slope0;

    let mut best: Option<Trial> = None;
    let keep_best = |t: &Trial, best: &mut Option<Trial>| {
        if t.f < f0 && best.as_ref().is_none_or(|b| t.f < b.f) {
            *best = Some(Trial {
                alpha: t.alpha,
                f: t.f,
                slope: t.slope,
                g: t.g.clone(),
            });
        }
    };

    let mut evals = 0usize;
    let mut lo = Trial {
        alpha: 0.0,
        f: f0,
        slope: slope0,
        g: Vec::new(),
    };
    let mut hi_alpha: Option<f64> = None;
    let mut alpha = alpha0;

    // bracketing phase
    loop {
        if evals >= cfg.max_evals {
            return Ok(best.map(|b| Step { x: point(b.alpha), f: b.f, g: b.g }));
        }
        evals += 1;
        let Some(t) = try_at(alpha)? else {
            // outside the domain: the step is too long
            hi_alpha = Some(alpha);
            alpha = 0.5 * (lo.alpha + alpha);
            continue;
        };
        keep_best(&t, &mut best);
        if !armijo(&t) || (lo.alpha > 0.0 && t.f >= lo.f) {
            hi_alpha = Some(t.alpha);
            break;
        }
        if curvature(&t) {
            return Ok(Some(Step { x: point(t.alpha), f: t.f, g: t.g }));
        }
        if t.slope >= 0.0 {
            hi_alpha = Some(lo.alpha);
            lo = t;
            break;
        }
        lo = t;
        alpha = match hi_alpha {
            Some(h) => 0.5 * (lo.alpha + h),
            None => 2.0 * alpha,
        };
    }

    // zoom phase: lo always satisfies sufficient decrease with the lowest value
    let mut hi = hi_alpha.unwrap_or(2.0 * lo.alpha.max(alpha));
    while evals < cfg.max_evals {
        evals += 1;
        let a = 0.5 * (lo.alpha + hi);
        if (hi - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1e-300) {
            break;
        }
        let Some(t) = try_at(a)? else {
            hi = a;
            continue;
        };
        keep_best(&t, &mut best);
        if !armijo(&t) || t.f >= lo.f {
            hi = t.alpha;
        } else {
            if curvature(&t) {
                return Ok(Some(Step { x: point(t.alpha), f: t.f, g: t.g }));
            }
            if t.slope * (hi - lo.alpha) >= 0.0 {
                hi = lo.alpha;
            }
            lo = t;
        }
    }
    Ok(best
        .filter(armijo)
        .map(|b| Step { x: point(b.alpha), f: b.f, g: b.g }))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, shift_dataset, DatasetConfig, ShiftMode};
    use ndarray::array;

    #[test]
    fn init_single_channel() {
        let m = init_m0(2, 1.0 / 2f64.sqrt(), BetaInit::Variance).unwrap();
        let expect = array![[-1.0, 2.0], [2.0, -1.0]];
        assert!(m.entries().iter().zip(expect.iter()).all(|(a, b)| (a - b).abs() < 1e-14));
        let lit = init_m0(2, 0.5, BetaInit::Literal).unwrap();
        assert_eq!(lit.entries(), array![[-1.0, 2.0], [2.0, -1.0]]);
    }

    #[test]
    fn init_uniform_blocks() {
        // w = 2, beta0 = 50: T = 1/4, V = 50/4
        let m = init_m0(8, 0.1, BetaInit::Variance).unwrap();
        assert!((m.get(0, 0) + 12.5).abs() < 1e-12);
        assert!((m.get(0, 1) + 25.0).abs() < 1e-12);
        assert!((m.get(4, 0) - 25.0).abs() < 1e-12);
        assert!((m.get(4, 4) + 50.0).abs() < 1e-12);
        assert_eq!(m.get(4, 5), 0.0);
        assert!(init_m0(3, 0.1, BetaInit::Variance).is_err());
        assert!(init_m0(4, 0.0, BetaInit::Variance).is_err());
    }

    #[test]
    fn unshifted_data_rejected() {
        let (_, ds) = generate(&DatasetConfig {
            w: 1,
            s: 1.0,
            m_samples: 10,
            ..Default::default()
        })
        .unwrap();
        let m0 = init_m0(2, 0.1, BetaInit::Variance).unwrap();
        let err = maximize(&m0, &ds, FVariant::InfInf, &OptimizerConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NotShifted));
    }

    #[test]
    fn single_channel_recovers_moments() {
        // With one input and one output the stationary point of the
        // infinite-range objective is the Gaussian fit to the sample moments.
        let cfg = DatasetConfig {
            w: 1,
            s: 1.0,
            m_samples: 2000,
            sigma_noise: 0.05,
            seed: 3,
            ..Default::default()
        };
        let (_, raw) = generate(&cfg).unwrap();
        let ds = shift_dataset(&raw, ShiftMode::EmpiricalMean).unwrap();
        let m0 = init_m0(2, 0.1, BetaInit::Variance).unwrap();
        let tight = OptimizerConfig {
            grad_tol: 1e-11,
            rel_tol: 0.0,
            ..Default::default()
        };
        let res = maximize(&m0, &ds, FVariant::InfInf, &tight).unwrap();
        assert!(res.converged, "{:?} {}", res.stop_reason, res.grad_norm);
        let c = ds.second_moments();
        // each site: A_i = 1/(2 var(I_i | I_j))
        let (c00, c01, c11) = (c[[0, 0]], c[[0, 1]], c[[1, 1]]);
        let det = c00 * c11 - c01 * c01;
        let a0 = c11 / (2.0 * det);
        let a1 = c00 / (2.0 * det);
        assert!((res.m.a(0) - a0).abs() / a0 < 1e-6, "{} {} {} {:?}", res.m.a(0), a0, res.iters, res.stop_reason);
        assert!((res.m.a(1) - a1).abs() / a1 < 1e-6);
        let coupling = c01 / det;
        assert!((res.m.get(1, 0) - coupling).abs() / coupling < 1e-6);
    }
}
