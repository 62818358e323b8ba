//! Sample-averaged log-pseudolikelihood of the coupling model and its
//! analytic gradient.
//!
//! Each site `i` sees a one-dimensional Gaussian-type conditional with
//! `A_i = -M_ii` and `B_i = sum_{j != i} M_ij I_j`:
//!
//! ```text
//! L_i = I_i B_i - I_i^2 A_i - 1/2 ln(pi / 4 A_i) - B_i^2 / 4 A_i - ln F_i
//! ```
//!
//! where `F_i = erf(u(I_max)) - erf(u(I_min))`, `u(x) = (2 A_i x - B_i) / sqrt(4 A_i)`,
//! depends on the integration range of the partition function.
//!
//! Two evaluation paths are provided. The sample path walks every
//! `(site, sample)` pair and supports all integration ranges. The moment path
//! is restricted to the infinite range, where `L` is quadratic in the data and
//! therefore a function of the second-moment matrix alone; it costs `O(N^3)`
//! per evaluation regardless of the sample count.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CouplingMatrix, SampleSet};
use crate::reduce::{self, pairwise_sum};
use crate::special;

/// Integration range of the single-site partition function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "tag")]
pub enum FVariant {
    /// `(-inf, inf)`
    InfInf,
    /// `(0, inf)`
    ZeroInf,
    /// `(0, 1)`
    ZeroOne,
    /// `(-h, h)`; `h = 1` for the unit range, `h = 1/2` for the half range.
    SymUnit { half_width: f64 },
}

impl Default for FVariant {
    fn default() -> Self {
        FVariant::InfInf
    }
}

impl FVariant {
    pub const ALL: [FVariant; 4] = [
        FVariant::InfInf,
        FVariant::ZeroInf,
        FVariant::ZeroOne,
        FVariant::SymUnit { half_width: 1.0 },
    ];

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            FVariant::InfInf => (f64::NEG_INFINITY, f64::INFINITY),
            FVariant::ZeroInf => (0.0, f64::INFINITY),
            FVariant::ZeroOne => (0.0, 1.0),
            FVariant::SymUnit { half_width } => (-half_width, half_width),
        }
    }

    /// Ranges symmetric around zero only make sense on mean-shifted data.
    pub fn requires_shift(&self) -> bool {
        matches!(self, FVariant::InfInf | FVariant::SymUnit { .. })
    }

    fn validate(&self) -> Result<()> {
        match *self {
            FVariant::SymUnit { half_width } if !(half_width > 0.0 && half_width.is_finite()) => {
                Err(Error::Domain(format!("half width {half_width} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for FVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            FVariant::InfInf => f.write_str("infinf"),
            FVariant::ZeroInf => f.write_str("zeroinf"),
            FVariant::ZeroOne => f.write_str("zeroone"),
            FVariant::SymUnit { half_width } if half_width == 1.0 => f.write_str("symunit"),
            FVariant::SymUnit { half_width } => write!(f, "symunit:{half_width}"),
        }
    }
}

impl FromStr for FVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let v = match lower.as_str() {
            "infinf" => FVariant::InfInf,
            "zeroinf" => FVariant::ZeroInf,
            "zeroone" => FVariant::ZeroOne,
            "symunit" => FVariant::SymUnit { half_width: 1.0 },
            other => match other.strip_prefix("symunit:") {
                Some(hw) => FVariant::SymUnit {
                    half_width: hw
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad half width in {s:?}")))?,
                },
                None => return Err(Error::InvalidConfig(format!("unknown variant {s:?}"))),
            },
        };
        v.validate()?;
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteParams {
    pub a: f64,
    pub b: f64,
}

/// `(A_i, B_i)` of site `i` for one sample; inactive couplings are zero and
/// drop out of the sum.
pub fn site_params(m: &CouplingMatrix, sample: ArrayView1<'_, f64>, i: usize) -> Result<SiteParams> {
    if sample.len() != m.n() {
        return Err(Error::dims(format!("sample length {} vs model size {}", sample.len(), m.n())));
    }
    if i >= m.n() {
        return Err(Error::dims(format!("site {i} out of range")));
    }
    let entries = m.entries();
    let row = entries.row(i);
    let mut b = 0.0;
    for (j, (&mij, &x)) in row.iter().zip(sample.iter()).enumerate() {
        if j != i {
            b += mij * x;
        }
    }
    Ok(SiteParams { a: m.a(i), b })
}

/// `ln F` and its partial derivatives with respect to `A` and `B`.
#[derive(Debug, Clone, Copy)]
struct LogF {
    value: f64,
    d_a: f64,
    d_b: f64,
}

fn log_f(v: FVariant, a: f64, b: f64) -> LogF {
    if let FVariant::InfInf = v {
        return LogF {
            value: std::f64::consts::LN_2,
            d_a: 0.0,
            d_b: 0.0,
        };
    }
    let (lo, hi) = v.bounds();
    let sa = a.sqrt();
    let u = |x: f64| {
        if x.is_infinite() {
            x
        } else {
            sa * x - b / (2.0 * sa)
        }
    };
    let (ulo, uhi) = (u(lo), u(hi));
    let value = special::ln_erf_diff(ulo, uhi);
    // exp(-u^2) / F, vanishing at infinite ends
    let w = |uu: f64| if uu.is_infinite() { 0.0 } else { (-uu * uu - value).exp() };
    let (wlo, whi) = (w(ulo), w(uhi));
    let d_b = -(whi - wlo) / (PI * a).sqrt();
    let du_da = |x: f64| (2.0 * a * x + b) / (4.0 * a * sa);
    let term = |wx: f64, x: f64| if wx == 0.0 { 0.0 } else { wx * du_da(x) };
    let d_a = 2.0 / PI.sqrt() * (term(whi, hi) - term(wlo, lo));
    LogF { value, d_a, d_b }
}

fn check_a(a: f64) -> Result<()> {
    if a > 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("A = {a} must be strictly positive")))
    }
}

/// Closed-form `F` for the chosen integration range.
pub fn eval_f(v: FVariant, p: SiteParams) -> Result<f64> {
    v.validate()?;
    check_a(p.a)?;
    Ok(log_f(v, p.a, p.b).value.exp())
}

/// Single-site log-pseudolikelihood.
pub fn eval_li(v: FVariant, p: SiteParams, intensity: f64) -> Result<f64> {
    v.validate()?;
    check_a(p.a)?;
    Ok(li_unchecked(v, p.a, p.b, intensity))
}

#[inline]
fn li_unchecked(v: FVariant, a: f64, b: f64, x: f64) -> f64 {
    x * b - x * x * a - 0.5 * (PI / (4.0 * a)).ln() - b * b / (4.0 * a) - log_f(v, a, b).value
}

/// `(L_i, dL_i/dA_i, dL_i/dB_i)`.
#[inline]
fn li_partials(v: FVariant, a: f64, b: f64, x: f64) -> (f64, f64, f64) {
    let lf = log_f(v, a, b);
    let value = x * b - x * x * a - 0.5 * (PI / (4.0 * a)).ln() - b * b / (4.0 * a) - lf.value;
    let d_a = -x * x + 0.5 / a + b * b / (4.0 * a * a) - lf.d_a;
    let d_b = x - b / (2.0 * a) - lf.d_b;
    (value, d_a, d_b)
}

fn check_model(m: &CouplingMatrix, n: usize) -> Result<()> {
    if m.n() != n {
        return Err(Error::dims(format!("model size {} vs sample length {n}", m.n())));
    }
    m.check_positive_diagonal()
}

/// Off-diagonal part of `M` and the vector of `A_i`.
fn split_diagonal(m: &CouplingMatrix) -> (Array2<f64>, Array1<f64>) {
    let mut off = m.entries().to_owned();
    let a = (0..m.n()).map(|i| m.a(i)).collect();
    off.diag_mut().fill(0.0);
    (off, a)
}

/// `B_{mu,i}` for every sample and site.
fn all_b(off: &Array2<f64>, ds: &SampleSet) -> Array2<f64> {
    ds.data().dot(off)
}

/// Total pseudolikelihood `L = (1/M) sum_i sum_mu L_{i,mu}`.
///
/// Summation is site-major: each site's samples are added with a fixed
/// pairwise tree, then the per-site totals are combined the same way.
pub fn eval_total_l(m: &CouplingMatrix, ds: &SampleSet, v: FVariant) -> Result<f64> {
    v.validate()?;
    check_model(m, ds.n())?;
    let (off, a) = split_diagonal(m);
    let b = all_b(&off, ds);
    let data = ds.data();
    let per_site: Vec<f64> = (0..ds.n())
        .into_par_iter()
        .map(|i| {
            let vals: Vec<f64> = (0..ds.len())
                .map(|mu| li_unchecked(v, a[i], b[[mu, i]], data[[mu, i]]))
                .collect();
            pairwise_sum(&vals)
        })
        .collect();
    Ok(pairwise_sum(&per_site) / ds.len() as f64)
}

/// Dense gradient: entry `(i,j)` holds `dL/dM_ij` for the shared symmetric
/// parameter (both site likelihoods included), the diagonal holds `dL/dM_ii`.
fn sample_value_grad(m: &CouplingMatrix, ds: &SampleSet, v: FVariant) -> (f64, Array2<f64>) {
    let n = ds.n();
    let count = ds.len();
    let (off, a) = split_diagonal(m);
    let b = all_b(&off, ds);
    let data = ds.data();

    let mut vals = Array2::<f64>::zeros((n, count));
    let mut g_a = Array2::<f64>::zeros((n, count));
    let mut g_b = Array2::<f64>::zeros((count, n));
    for mu in 0..count {
        for i in 0..n {
            let (l, da, db) = li_partials(v, a[i], b[[mu, i]], data[[mu, i]]);
            vals[[i, mu]] = l;
            g_a[[i, mu]] = da;
            g_b[[mu, i]] = db;
        }
    }
    let site_sums: Vec<f64> = vals.rows().into_iter().map(|r| pairwise_sum(&r.to_vec())).collect();
    let value = pairwise_sum(&site_sums) / count as f64;

    // cross[i][j] = (1/M) sum_mu dL_i/dB_i * I_j
    let mut cross = reduce::block_reduce(count, (n, n), |range| {
        let gb = g_b.slice(s![range.clone(), ..]);
        let x = data.slice(s![range, ..]);
        gb.t().dot(&x)
    });
    cross /= count as f64;
    let mut grad = &cross + &cross.t();
    for i in 0..n {
        grad[[i, i]] = -pairwise_sum(&g_a.row(i).to_vec()) / count as f64;
    }
    (value, grad)
}

/// Gradient of [`eval_total_l`] over the active independent parameters,
/// ordered as [`CouplingMatrix::param_index`].
pub fn grad_l(m: &CouplingMatrix, ds: &SampleSet, v: FVariant) -> Result<Vec<f64>> {
    v.validate()?;
    check_model(m, ds.n())?;
    let (_, grad) = sample_value_grad(m, ds, v);
    Ok(pack(m, &grad))
}

fn pack(m: &CouplingMatrix, dense: &Array2<f64>) -> Vec<f64> {
    m.param_index().into_iter().map(|(i, j)| dense[[i, j]]).collect()
}

/// Value and dense gradient from the second-moment matrix `C`
/// (infinite integration range only).
fn moment_value_grad(m: &CouplingMatrix, c: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = m.n();
    let (off, a) = split_diagonal(m);
    let g = off.dot(c);
    // q_i = (O C O)_ii
    let q: Vec<f64> = (0..n).map(|i| g.row(i).dot(&off.row(i))).collect();
    let per_site: Vec<f64> = (0..n)
        .map(|i| g[[i, i]] - a[i] * c[[i, i]] + 0.5 * (a[i] / PI).ln() - q[i] / (4.0 * a[i]))
        .collect();
    let value = pairwise_sum(&per_site);

    let mut grad = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            grad[[i, j]] = if i == j {
                c[[i, i]] - 0.5 / a[i] - q[i] / (4.0 * a[i] * a[i])
            } else {
                2.0 * c[[i, j]] - g[[i, j]] / (2.0 * a[i]) - g[[j, i]] / (2.0 * a[j])
            };
        }
    }
    (value, grad)
}

/// How [`PseudoLikelihood`] evaluates the objective.
#[derive(Debug, Clone, Copy)]
enum Backend<'a> {
    Samples { ds: &'a SampleSet, variant: FVariant },
    Moments,
}

/// The total pseudolikelihood as a function of the active parameters of a
/// fixed mask.
#[derive(Debug, Clone)]
pub struct PseudoLikelihood<'a> {
    template: CouplingMatrix,
    backend: Backend<'a>,
    /// Second moments of the data, for the moment path and the curvature
    /// estimate.
    c: Array2<f64>,
    floor: f64,
}

impl<'a> PseudoLikelihood<'a> {
    /// Walks every sample; works for all integration ranges.
    pub fn from_samples(template: &CouplingMatrix, ds: &'a SampleSet, variant: FVariant) -> Result<Self> {
        variant.validate()?;
        if template.n() != ds.n() {
            return Err(Error::dims("model and dataset sizes differ"));
        }
        Ok(Self {
            template: template.clone(),
            backend: Backend::Samples { ds, variant },
            c: ds.second_moments(),
            floor: 0.0,
        })
    }

    /// Sufficient-statistics evaluation for the infinite range.
    pub fn from_moments(template: &CouplingMatrix, c: Array2<f64>) -> Result<Self> {
        if c.dim() != (template.n(), template.n()) {
            return Err(Error::dims("moment matrix shape differs from model"));
        }
        Ok(Self {
            template: template.clone(),
            backend: Backend::Moments,
            c,
            floor: 0.0,
        })
    }

    /// Picks the moment path for the infinite range, samples otherwise.
    pub fn auto(template: &CouplingMatrix, ds: &'a SampleSet, variant: FVariant) -> Result<Self> {
        match variant {
            FVariant::InfInf => Self::from_moments(template, ds.second_moments()),
            _ => Self::from_samples(template, ds, variant),
        }
    }

    pub fn template(&self) -> &CouplingMatrix {
        &self.template
    }

    /// Reuses the same data with a different mask.
    pub fn with_template(&self, template: &CouplingMatrix) -> Result<Self> {
        if template.n() != self.template.n() {
            return Err(Error::dims("model size changed"));
        }
        Ok(Self {
            template: template.clone(),
            backend: self.backend,
            c: self.c.clone(),
            floor: self.floor,
        })
    }

    /// Adds independent zero-mean jitter of variance `floor` to every
    /// channel, in expectation. On the infinite range this is exactly the
    /// objective of the data with `floor` added to each channel variance; on
    /// the other ranges it acts as the same quadratic penalty
    /// `-floor * sum_i (A_i + sum_l M_il^2 / 4 A_i)`.
    pub fn with_floor(mut self, floor: f64) -> Result<Self> {
        if !(floor >= 0.0 && floor.is_finite()) {
            return Err(Error::InvalidConfig(format!("variance floor {floor} must be non-negative")));
        }
        self.floor = floor;
        Ok(self)
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn dim(&self) -> usize {
        self.template.n_active()
    }

    /// Model with the given packed parameters.
    pub fn model(&self, params: &[f64]) -> Result<CouplingMatrix> {
        let mut m = self.template.clone();
        m.set_params(params)?;
        Ok(m)
    }

    /// `L` and its gradient at `params`; points with some `A_i <= 0` are
    /// rejected.
    pub fn value_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let m = self.model(params)?;
        m.check_positive_diagonal()?;
        let (mut value, mut dense) = match &self.backend {
            Backend::Samples { ds, variant } => sample_value_grad(&m, ds, *variant),
            Backend::Moments => moment_value_grad(&m, &self.c),
        };
        if self.floor > 0.0 {
            value += floor_penalty(&m, self.floor, &mut dense);
        }
        if !value.is_finite() {
            return Err(Error::Domain(format!("non-finite pseudolikelihood {value}")));
        }
        Ok((value, pack(&m, &dense)))
    }

    /// Diagonal of the negated Hessian of the infinite-range objective
    /// (jitter included), in packed order. Strictly positive wherever every
    /// `A_i > 0`.
    pub fn curvature(&self, params: &[f64]) -> Result<Vec<f64>> {
        let m = self.model(params)?;
        m.check_positive_diagonal()?;
        let (off, a) = split_diagonal(&m);
        let mut c = self.c.clone();
        c.diag_mut().mapv_inplace(|v| v + self.floor);
        let g = off.dot(&c);
        Ok(m
            .param_index()
            .into_iter()
            .map(|(i, j)| {
                if i == j {
                    let q = g.row(i).dot(&off.row(i));
                    0.5 / (a[i] * a[i]) + q / (2.0 * a[i] * a[i] * a[i])
                } else {
                    c[[j, j]] / (2.0 * a[i]) + c[[i, i]] / (2.0 * a[j])
                }
            })
            .collect())
    }
}

/// Value of the jitter penalty; its gradient is added to `dense`.
fn floor_penalty(m: &CouplingMatrix, eps: f64, dense: &mut Array2<f64>) -> f64 {
    let n = m.n();
    let (off, a) = split_diagonal(m);
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let s: f64 = off.row(i).iter().map(|x| x * x).sum();
        terms.push(-eps * (a[i] + s / (4.0 * a[i])));
        dense[[i, i]] += eps * (1.0 - s / (4.0 * a[i] * a[i]));
        for j in 0..n {
            if j != i {
                dense[[i, j]] -= eps * off[[i, j]] * (0.5 / a[i] + 0.5 / a[j]);
            }
        }
    }
    pairwise_sum(&terms)
}

/// Per-channel log-likelihood of the disconnected model, averaged over
/// samples, for Gaussian channels of standard deviation `sigma[i]`.
pub fn l_min_theory(ds: &SampleSet, sigma: &[f64], v: FVariant) -> Result<f64> {
    l_min_theory_floored(ds, sigma, v, 0.0)
}

/// [`l_min_theory`] for the objective with a variance floor: every channel's
/// mean square is raised by `floor`, matching
/// [`PseudoLikelihood::with_floor`] on the disconnected model.
pub fn l_min_theory_floored(ds: &SampleSet, sigma: &[f64], v: FVariant, floor: f64) -> Result<f64> {
    v.validate()?;
    if !(floor >= 0.0 && floor.is_finite()) {
        return Err(Error::InvalidConfig(format!("variance floor {floor} must be non-negative")));
    }
    if !ds.is_shifted() {
        return Err(Error::NotShifted);
    }
    if sigma.len() != ds.n() {
        return Err(Error::dims(format!("{} sigmas for {} channels", sigma.len(), ds.n())));
    }
    if let Some(bad) = sigma.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::Domain(format!("sigma = {bad} must be positive")));
    }
    let second = mean_squares(ds);
    let terms: Vec<f64> = sigma
        .iter()
        .zip(second.iter())
        .map(|(&sd, &ms)| {
            let a = 1.0 / (2.0 * sd * sd);
            // -<I^2>/(2 sd^2) - 1/2 ln(pi sd^2 / 2) - ln F(a, 0)
            -(ms + floor) * a - 0.5 * (PI / (4.0 * a)).ln() - log_f(v, a, 0.0).value
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Two-variance form: `sigma_in` on every input channel, `sigma_out` on every
/// output channel, infinite integration range.
pub fn l_min_two_sigma(ds: &SampleSet, sigma_in: f64, sigma_out: f64) -> Result<f64> {
    if !ds.is_shifted() {
        return Err(Error::NotShifted);
    }
    if !(sigma_in > 0.0 && sigma_out > 0.0) {
        return Err(Error::Domain("sigmas must be positive".into()));
    }
    let second = mean_squares(ds);
    let h = ds.half();
    let s_in = pairwise_sum(&second.slice(s![..h]).to_vec());
    let s_out = pairwise_sum(&second.slice(s![h..]).to_vec());
    let n = ds.n() as f64;
    Ok(-0.5 * (s_in / (sigma_in * sigma_in) + s_out / (sigma_out * sigma_out))
        - 0.5 * n * (2.0 * PI * sigma_in * sigma_out).ln())
}

/// Per-channel `(1/M) sum_mu I_i^2`.
pub fn mean_squares(ds: &SampleSet) -> Array1<f64> {
    let m = ds.len() as f64;
    ds.data()
        .axis_iter(Axis(1))
        .map(|col| pairwise_sum(&col.iter().map(|x| x * x).collect::<Vec<_>>()) / m)
        .collect()
}
