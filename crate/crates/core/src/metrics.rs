//! Physical read-out of inferred models and the validation statistics used
//! to judge them.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{split_blocks, CouplingMatrix, SampleSet};
use crate::reduce::pairwise_sum;

/// Transmission matrix implied by `M`: the lower-left block divided row-wise
/// by `2 beta`.
pub fn extract_t(m: &CouplingMatrix) -> Result<Array2<f64>> {
    let b = split_blocks(m)?;
    if let Some((g, &beta)) = b.beta.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(Error::DegenerateModel(format!("output {g} has beta = {beta}")));
    }
    Ok(&b.t_block / &(&b.beta * 2.0).insert_axis(Axis(1)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub beta: Vec<f64>,
    /// `1 / sqrt(2 beta)` per output channel.
    pub sigma: Vec<f64>,
    /// Measurement temperature `(2/N) sum 1/beta`.
    pub theta: f64,
}

pub fn extract_noise(m: &CouplingMatrix) -> Result<NoiseEstimate> {
    let beta = split_blocks(m)?.beta.to_vec();
    if let Some((g, &b)) = beta.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(Error::DegenerateModel(format!("output {g} has beta = {b}")));
    }
    let sigma = beta.iter().map(|b| (0.5 / b).sqrt()).collect();
    let inv: Vec<f64> = beta.iter().map(|b| 1.0 / b).collect();
    let theta = 2.0 / m.n() as f64 * pairwise_sum(&inv);
    Ok(NoiseEstimate { beta, sigma, theta })
}

fn frobenius(a: ArrayView2<'_, f64>) -> f64 {
    pairwise_sum(&a.iter().map(|x| x * x).collect::<Vec<_>>()).sqrt()
}

/// `Q = sqrt(|T - T_inf| / |T|)` with Frobenius norms, normalized by the
/// first argument.
pub fn q_error(t_true: ArrayView2<'_, f64>, t_inf: ArrayView2<'_, f64>) -> Result<f64> {
    if t_true.dim() != t_inf.dim() {
        return Err(Error::dims(format!("{:?} vs {:?}", t_true.dim(), t_inf.dim())));
    }
    let norm = frobenius(t_true);
    if norm == 0.0 {
        return Err(Error::Domain("reference matrix has zero norm".into()));
    }
    let diff = &t_true - &t_inf;
    Ok((frobenius(diff.view()) / norm).sqrt())
}

/// Pearson correlation.
pub fn correlation(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dims(format!("lengths {} and {}", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::ZeroVariance);
    }
    let n = x.len() as f64;
    let mx = pairwise_sum(&x.to_vec()) / n;
    let my = pairwise_sum(&y.to_vec()) / n;
    let dx: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let dy: Vec<f64> = y.iter().map(|v| v - my).collect();
    let sxy = pairwise_sum(&dx.iter().zip(&dy).map(|(a, b)| a * b).collect::<Vec<_>>());
    let sxx = pairwise_sum(&dx.iter().map(|a| a * a).collect::<Vec<_>>());
    let syy = pairwise_sum(&dy.iter().map(|b| b * b).collect::<Vec<_>>());
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoUnity {
    /// All entries of the product, largest first.
    pub sorted: Vec<f64>,
    pub diagonal_count: usize,
    pub off_diagonal_count: usize,
    pub mean_diagonal: f64,
    pub mean_abs_off_diagonal: f64,
}

/// Summary of the product `a b`, which is the identity when `a = b^-1`.
pub fn pseudo_unity(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<PseudoUnity> {
    let (r, c) = a.dim();
    if r != c || a.dim() != b.dim() {
        return Err(Error::dims(format!("{:?} times {:?}", a.dim(), b.dim())));
    }
    let p = a.dot(&b);
    let mut sorted: Vec<f64> = p.iter().copied().collect();
    sorted.sort_by(|x, y| y.total_cmp(x));
    let diag: Vec<f64> = p.diag().to_vec();
    let off: Vec<f64> = p
        .indexed_iter()
        .filter(|((i, j), _)| i != j)
        .map(|(_, v)| v.abs())
        .collect();
    Ok(PseudoUnity {
        sorted,
        diagonal_count: r,
        off_diagonal_count: off.len(),
        mean_diagonal: pairwise_sum(&diag) / r as f64,
        mean_abs_off_diagonal: if off.is_empty() { 0.0 } else { pairwise_sum(&off) / off.len() as f64 },
    })
}

/// Mean and population standard deviation of the row sums.
pub fn stochasticity(t: ArrayView2<'_, f64>) -> (f64, f64) {
    let sums = row_sums(t);
    mean_std(&sums)
}

pub fn row_sums(t: ArrayView2<'_, f64>) -> Vec<f64> {
    t.rows().into_iter().map(|r| pairwise_sum(&r.to_vec())).collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let var = pairwise_sum(&xs.iter().map(|x| (x - mean) * (x - mean)).collect::<Vec<_>>()) / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inverse {
    pub matrix: Array2<f64>,
    /// `max_i sum_j |(t t^-1 - I)_ij|`
    pub residual: f64,
}

/// Gauss-Jordan elimination with partial pivoting.
pub fn matrix_inverse(t: ArrayView2<'_, f64>) -> Result<Inverse> {
    let (n, c) = t.dim();
    if n != c {
        return Err(Error::dims(format!("cannot invert a {n}x{c} matrix")));
    }
    let scale = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if n == 0 || scale == 0.0 {
        return Err(Error::SingularMatrix { column: 0, pivot: 0.0 });
    }
    let mut a = t.to_owned();
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let (p, pivot) = (col..n)
            .map(|r| (r, a[[r, col]]))
            .fold((col, 0.0f64), |best, (r, v)| if v.abs() > best.1.abs() { (r, v) } else { best });
        if pivot.abs() < 1e-12 * scale {
            return Err(Error::SingularMatrix { column: col, pivot });
        }
        if p != col {
            for k in 0..n {
                a.swap([p, k], [col, k]);
                inv.swap([p, k], [col, k]);
            }
        }
        for k in 0..n {
            a[[col, k]] /= pivot;
            inv[[col, k]] /= pivot;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[[r, col]];
            if f == 0.0 {
                continue;
            }
            for k in 0..n {
                a[[r, k]] -= f * a[[col, k]];
                inv[[r, k]] -= f * inv[[col, k]];
            }
        }
    }
    let mut check = t.dot(&inv);
    check.diag_mut().mapv_inplace(|v| v - 1.0);
    let residual = check
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(Inverse { matrix: inv, residual })
}

/// Mean and spread of per-sample correlations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveStat {
    pub mean: f64,
    pub std: f64,
}

/// The four validation curves. `None` marks a curve whose matrix could not
/// be inverted or whose predictions were degenerate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    /// `T_inf` applied to inputs, against the noiseless outputs.
    pub focusing_direct: Option<CurveStat>,
    /// `inv((T^-1)_inf)` applied to inputs, against the noiseless outputs.
    pub focusing_inverted: Option<CurveStat>,
    /// `inv(T_inf)` applied to measured outputs, against the inputs.
    pub imaging_inverted: Option<CurveStat>,
    /// `(T^-1)_inf` applied to measured outputs, against the inputs.
    pub imaging_direct: Option<CurveStat>,
}

/// Row-wise correlation of `pred` against `target`.
fn curve(pred: &Array2<f64>, target: ArrayView2<'_, f64>) -> Option<CurveStat> {
    let cs: Vec<Result<f64>> = (0..pred.nrows())
        .into_par_iter()
        .map(|mu| correlation(pred.row(mu), target.row(mu)))
        .collect();
    let cs: Result<Vec<f64>> = cs.into_iter().collect();
    match cs {
        Ok(cs) if !cs.is_empty() => {
            let (mean, std) = mean_std(&cs);
            Some(CurveStat { mean, std })
        }
        Ok(_) => None,
        Err(e) => {
            log::warn!("validation curve unavailable: {e}");
            None
        }
    }
}

fn invert_or_none(t: ArrayView2<'_, f64>, what: &str) -> Option<Array2<f64>> {
    match matrix_inverse(t) {
        Ok(inv) => Some(inv.matrix),
        Err(e) => {
            log::warn!("cannot invert {what}: {e}");
            None
        }
    }
}

/// Focusing and imaging on an unshifted validation set drawn from `t_true`.
pub fn validate(
    t_inf: Option<ArrayView2<'_, f64>>,
    t_inv_inf: Option<ArrayView2<'_, f64>>,
    t_true: ArrayView2<'_, f64>,
    val_set: &SampleSet,
) -> Result<Validation> {
    let h = val_set.half();
    for t in [Some(t_true), t_inf, t_inv_inf].into_iter().flatten() {
        if t.dim() != (h, h) {
            return Err(Error::dims(format!("matrix {:?} for {h} channels", t.dim())));
        }
    }
    let inputs = val_set.inputs();
    let outputs = val_set.outputs();
    let clean = inputs.dot(&t_true.t());
    // rows are samples, so a map T acts as X T^T
    let apply = |m: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>| x.dot(&m.t());

    let focusing_direct = t_inf.and_then(|t| curve(&apply(t, inputs), clean.view()));
    let focusing_inverted = t_inv_inf
        .and_then(|t| invert_or_none(t, "inverse estimate"))
        .and_then(|inv| curve(&apply(inv.view(), inputs), clean.view()));
    let imaging_inverted = t_inf
        .and_then(|t| invert_or_none(t, "direct estimate"))
        .and_then(|inv| curve(&apply(inv.view(), outputs), inputs));
    let imaging_direct = t_inv_inf.and_then(|t| curve(&apply(t, outputs), inputs));
    Ok(Validation {
        focusing_direct,
        focusing_inverted,
        imaging_inverted,
        imaging_direct,
    })
}

/// Everything derived from one inferred model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub theta: f64,
    pub sigma_est: Vec<f64>,
    pub q_error: Option<f64>,
    /// Correlation between the flattened true and inferred matrices.
    pub t_correlation: Option<f64>,
    pub row_sums: Vec<f64>,
    pub row_sum_mean: f64,
    pub row_sum_std: f64,
    pub pseudo_unity_sorted: Option<Vec<f64>>,
}

impl MetricsReport {
    /// `t_true` enables the comparison fields; `t_inv_inf` the pseudo-unity
    /// spectrum of `(T^-1)_inf T_inf`.
    pub fn build(
        m: &CouplingMatrix,
        t_true: Option<ArrayView2<'_, f64>>,
        t_inv_inf: Option<ArrayView2<'_, f64>>,
    ) -> Result<Self> {
        let t_inf = extract_t(m)?;
        let noise = extract_noise(m)?;
        let (q, c) = match t_true {
            Some(t) => {
                let flat_true: Array1<f64> = t.iter().copied().collect();
                let flat_inf: Array1<f64> = t_inf.iter().copied().collect();
                (Some(q_error(t, t_inf.view())?), correlation(flat_true.view(), flat_inf.view()).ok())
            }
            None => (None, None),
        };
        let sums = row_sums(t_inf.view());
        let (row_sum_mean, row_sum_std) = mean_std(&sums);
        let pu = match t_inv_inf {
            Some(ti) => Some(pseudo_unity(ti, t_inf.view())?.sorted),
            None => None,
        };
        Ok(Self {
            theta: noise.theta,
            sigma_est: noise.sigma,
            q_error: q,
            t_correlation: c,
            row_sums: sums,
            row_sum_mean,
            row_sum_std,
            pseudo_unity_sorted: pu,
        })
    }
}
