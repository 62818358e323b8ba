//! Shared domain types: intensity samples, ground-truth channels and the
//! block-structured symmetric coupling matrix.
//!
//! Index convention: a concatenated vector of length `N = 2 h` holds the
//! `h = w^2` input pixels first and the `h` output pixels after them. In the
//! coupling matrix the upper-left `h x h` block couples inputs to inputs, the
//! lower-left block holds `2 beta_g T_{g,e}` at `(h + g, e)` and the
//! lower-right block is the diagonal `-beta`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::reduce;

/// One concatenated input/output intensity vector.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensitySample(Vec<f64>);

impl IntensitySample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() % 2 != 0 {
            return Err(Error::dims(format!(
                "sample length {} must be even and positive",
                values.len()
            )));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn input(&self) -> &[f64] {
        &self.0[..self.0.len() / 2]
    }

    pub fn output(&self) -> &[f64] {
        &self.0[self.0.len() / 2..]
    }
}

/// `M` samples of length `N` stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    data: Array2<f64>,
    channel_means: Array1<f64>,
    shifted: bool,
}

impl SampleSet {
    /// Wraps an unshifted `M x N` data matrix.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (m, n) = data.dim();
        if m == 0 {
            return Err(Error::dims("sample set must be nonempty"));
        }
        if n == 0 || n % 2 != 0 {
            return Err(Error::dims(format!("sample length {n} must be even and positive")));
        }
        Ok(Self {
            data,
            channel_means: Array1::zeros(n),
            shifted: false,
        })
    }

    pub fn from_samples(samples: &[IntensitySample]) -> Result<Self> {
        let n = samples
            .first()
            .map(IntensitySample::len)
            .ok_or_else(|| Error::dims("sample set must be nonempty"))?;
        let mut data = Array2::zeros((samples.len(), n));
        for (mut row, s) in data.rows_mut().into_iter().zip(samples) {
            if s.len() != n {
                return Err(Error::dims(format!("sample of length {} in a set of length {n}", s.len())));
            }
            row.assign(&ArrayView1::from(s.values()));
        }
        Self::new(data)
    }

    /// Reassembles a set with explicit shift bookkeeping, as read from disk.
    pub fn from_parts(data: Array2<f64>, channel_means: Array1<f64>, shifted: bool) -> Result<Self> {
        let mut set = Self::new(data)?;
        if channel_means.len() != set.n() {
            return Err(Error::dims("channel_means length differs from sample length"));
        }
        set.channel_means = channel_means;
        set.shifted = shifted;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    /// Sample length `N`.
    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn half(&self) -> usize {
        self.n() / 2
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn sample(&self, mu: usize) -> ArrayView1<'_, f64> {
        self.data.row(mu)
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.data.slice(s![.., ..self.half()])
    }

    pub fn outputs(&self) -> ArrayView2<'_, f64> {
        self.data.slice(s![.., self.half()..])
    }

    pub fn channel_means(&self) -> ArrayView1<'_, f64> {
        self.channel_means.view()
    }

    pub fn is_shifted(&self) -> bool {
        self.shifted
    }

    pub(crate) fn data_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    pub(crate) fn set_shift(&mut self, means: Array1<f64>, shifted: bool) {
        self.channel_means = means;
        self.shifted = shifted;
    }

    /// Per-channel mean, summed pairwise over samples.
    pub fn empirical_means(&self) -> Array1<f64> {
        let m = self.len() as f64;
        self.data
            .axis_iter(Axis(1))
            .map(|col| reduce::pairwise_sum(&col.to_vec()) / m)
            .collect()
    }

    /// Second-moment matrix `(1/M) sum_mu I_mu I_mu^T`.
    pub fn second_moments(&self) -> Array2<f64> {
        let n = self.n();
        let mut c = reduce::block_reduce(self.len(), (n, n), |range| {
            let block = self.data.slice(s![range, ..]);
            block.t().dot(&block)
        });
        c /= self.len() as f64;
        c
    }

    /// Exchanges the input and output halves of every sample.
    pub fn swap_halves(&self) -> SampleSet {
        let h = self.half();
        let mut data = Array2::zeros(self.data.dim());
        data.slice_mut(s![.., ..h]).assign(&self.outputs());
        data.slice_mut(s![.., h..]).assign(&self.inputs());
        let mut means = Array1::zeros(self.n());
        means.slice_mut(s![..h]).assign(&self.channel_means.slice(s![h..]));
        means.slice_mut(s![h..]).assign(&self.channel_means.slice(s![..h]));
        SampleSet {
            data,
            channel_means: means,
            shifted: self.shifted,
        }
    }
}

/// Ground-truth channel used to synthesize data.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionSpec {
    pub w: usize,
    pub s: f64,
    pub t: Array2<f64>,
    pub sigma: f64,
    pub seed: u64,
}

impl TransmissionSpec {
    /// Checks shape, nonnegativity and row-stochasticity.
    pub fn validate(&self) -> Result<()> {
        let h = self.w * self.w;
        if self.t.dim() != (h, h) {
            return Err(Error::dims(format!(
                "T is {:?}, expected {h}x{h} for w = {}",
                self.t.dim(),
                self.w
            )));
        }
        if self.t.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidConfig("T has a negative or NaN entry".into()));
        }
        for (g, row) in self.t.rows().into_iter().enumerate() {
            let sum = reduce::pairwise_sum(&row.to_vec());
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidConfig(format!("row {g} of T sums to {sum}")));
            }
        }
        Ok(())
    }

    pub fn nnz(&self) -> usize {
        self.t.iter().filter(|&&x| x != 0.0).count()
    }
}

/// Symmetric `N x N` coupling matrix with an activity mask.
///
/// Inactive entries are held at exactly zero. Independent parameters are the
/// pairs `i <= j`, enumerated row-major and filtered by the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    entries: Array2<f64>,
    mask: Array2<bool>,
}

impl CouplingMatrix {
    /// All-zero matrix whose mask is the structural default: everything is
    /// active except the off-diagonal part of the output block.
    pub fn zeros(n: usize) -> Result<Self> {
        if n == 0 || n % 2 != 0 {
            return Err(Error::dims(format!("coupling matrix size {n} must be even and positive")));
        }
        Ok(Self {
            entries: Array2::zeros((n, n)),
            mask: structural_mask(n),
        })
    }

    /// Builds from a dense matrix and mask; both must be symmetric and
    /// masked entries must be zero.
    pub fn from_parts(entries: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c || r % 2 != 0 || r == 0 {
            return Err(Error::dims(format!("coupling matrix must be square with even size, got {r}x{c}")));
        }
        if mask.dim() != (r, c) {
            return Err(Error::dims("mask shape differs from matrix shape"));
        }
        for i in 0..r {
            for j in 0..i {
                if entries[[i, j]] != entries[[j, i]] || mask[[i, j]] != mask[[j, i]] {
                    return Err(Error::dims(format!("matrix or mask not symmetric at ({i},{j})")));
                }
            }
        }
        if entries.iter().zip(mask.iter()).any(|(&v, &on)| !on && v != 0.0) {
            return Err(Error::dims("masked-out entry holds a nonzero value"));
        }
        Ok(Self { entries, mask })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn half(&self) -> usize {
        self.n() / 2
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[[i, j]]
    }

    /// Writes `(i,j)` and `(j,i)`; writing to an inactive entry is ignored.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        if self.mask[[i, j]] {
            self.entries[[i, j]] = value;
            self.entries[[j, i]] = value;
        }
    }

    pub fn is_active(&self, i: usize, j: usize) -> bool {
        self.mask[[i, j]]
    }

    /// Deactivating an entry zeroes it.
    pub fn set_active(&mut self, i: usize, j: usize, active: bool) {
        self.mask[[i, j]] = active;
        self.mask[[j, i]] = active;
        if !active {
            self.entries[[i, j]] = 0.0;
            self.entries[[j, i]] = 0.0;
        }
    }

    pub fn entries(&self) -> ArrayView2<'_, f64> {
        self.entries.view()
    }

    pub fn mask(&self) -> ArrayView2<'_, bool> {
        self.mask.view()
    }

    /// `A_i = -M_ii`.
    pub fn a(&self, i: usize) -> f64 {
        -self.entries[[i, i]]
    }

    /// Active independent parameters `(i, j)` with `i <= j`, row-major.
    pub fn param_index(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut idx = Vec::new();
        for i in 0..n {
            for j in i..n {
                if self.mask[[i, j]] {
                    idx.push((i, j));
                }
            }
        }
        idx
    }

    pub fn n_active(&self) -> usize {
        let n = self.n();
        (0..n).map(|i| (i..n).filter(|&j| self.mask[[i, j]]).count()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.param_index().into_iter().map(|(i, j)| self.entries[[i, j]]).collect()
    }

    /// Overwrites the active parameters from a packed vector.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let idx = self.param_index();
        if idx.len() != params.len() {
            return Err(Error::dims(format!(
                "{} parameters supplied for {} active entries",
                params.len(),
                idx.len()
            )));
        }
        for (&(i, j), &v) in idx.iter().zip(params) {
            self.entries[[i, j]] = v;
            self.entries[[j, i]] = v;
        }
        Ok(())
    }

    /// Number of active entries in the transmission block.
    pub fn t_active(&self) -> usize {
        let h = self.half();
        self.mask.slice(s![h.., ..h]).iter().filter(|&&b| b).count()
    }

    /// Errors unless every `A_i` is strictly positive.
    pub fn check_positive_diagonal(&self) -> Result<()> {
        for i in 0..self.n() {
            let a = self.a(i);
            if !(a > 0.0) {
                return Err(Error::NonPositiveA { site: i, value: a });
            }
        }
        Ok(())
    }
}

/// Everything active except cross-output couplings.
pub fn structural_mask(n: usize) -> Array2<bool> {
    let h = n / 2;
    Array2::from_shape_fn((n, n), |(i, j)| !(i >= h && j >= h && i != j))
}

/// Block view of a coupling matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocks {
    /// `beta_g`, read as the negated output diagonal.
    pub beta: Array1<f64>,
    /// Lower-left block, `2 beta T` on a well-formed model.
    pub t_block: Array2<f64>,
    /// Upper-left block: `-V_ee` on the diagonal and `-2 V_ef` off it.
    pub v_block: Array2<f64>,
}

impl Blocks {
    /// Rebuilds the coupling matrix with the structural mask.
    pub fn assemble(&self) -> Result<CouplingMatrix> {
        let h = self.beta.len();
        if self.t_block.dim() != (h, h) || self.v_block.dim() != (h, h) {
            return Err(Error::dims("block shapes disagree with beta length"));
        }
        let mut m = CouplingMatrix::zeros(2 * h)?;
        for e in 0..h {
            for f in 0..=e {
                m.set(e, f, self.v_block[[e, f]]);
            }
        }
        for g in 0..h {
            for e in 0..h {
                m.set(h + g, e, self.t_block[[g, e]]);
            }
            m.set(h + g, h + g, -self.beta[g]);
        }
        Ok(m)
    }
}

pub fn split_blocks(m: &CouplingMatrix) -> Result<Blocks> {
    let n = m.n();
    if n % 2 != 0 {
        return Err(Error::dims(format!("coupling matrix size {n} is odd")));
    }
    let h = n / 2;
    let e = m.entries();
    Ok(Blocks {
        beta: (0..h).map(|g| -e[[h + g, h + g]]).collect(),
        t_block: e.slice(s![h.., ..h]).to_owned(),
        v_block: e.slice(s![..h, ..h]).to_owned(),
    })
}

/// Builds the coupling matrix of a channel `T` with inverse noises `beta`.
pub fn assemble_m(t: ArrayView2<'_, f64>, beta: ArrayView1<'_, f64>) -> Result<CouplingMatrix> {
    let h = beta.len();
    if t.dim() != (h, h) {
        return Err(Error::dims(format!("T is {:?} but beta has length {h}", t.dim())));
    }
    if let Some((index, &value)) = beta.iter().enumerate().find(|(_, &b)| !(b > 0.0)) {
        return Err(Error::InvalidNoise { index, value });
    }
    // V = T^T diag(beta) T
    let bt = &t * &beta.view().insert_axis(Axis(1));
    let v = t.t().dot(&bt);
    let mut v_block = v.mapv(|x| -2.0 * x);
    for e in 0..h {
        v_block[[e, e]] = -v[[e, e]];
    }
    Blocks {
        beta: beta.to_owned(),
        t_block: bt.mapv(|x| 2.0 * x),
        v_block,
    }
    .assemble()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn split_two_by_two() {
        let m = Blocks {
            beta: array![2.5],
            t_block: array![[0.7]],
            v_block: array![[-1.5]],
        }
        .assemble()
        .unwrap();
        assert_eq!(m.entries(), array![[-1.5, 0.7], [0.7, -2.5]]);
        let b = split_blocks(&m).unwrap();
        assert_eq!(b.beta, array![2.5]);
        assert_eq!(b.t_block, array![[0.7]]);
        assert_eq!(b.v_block, array![[-1.5]]);
    }

    #[test]
    fn assemble_identity_channel() {
        let m = assemble_m(Array2::eye(2).view(), array![1.0, 1.0].view()).unwrap();
        let b = split_blocks(&m).unwrap();
        assert_eq!(b.beta, array![1.0, 1.0]);
        assert_eq!(b.t_block, Array2::<f64>::eye(2) * 2.0);
        assert_eq!(b.v_block, array![[-1.0, 0.0], [0.0, -1.0]]);
        assert_eq!(m.get(2, 2), -1.0);
        assert_eq!(m.get(3, 3), -1.0);
    }

    #[test]
    fn assemble_uniform_channel() {
        let t = array![[0.5, 0.5], [0.5, 0.5]];
        let m = assemble_m(t.view(), array![2.0, 2.0].view()).unwrap();
        let b = split_blocks(&m).unwrap();
        assert_eq!(b.v_block, array![[-1.0, -2.0], [-2.0, -1.0]]);
        assert_eq!(b.t_block, array![[2.0, 2.0], [2.0, 2.0]]);
    }

    #[test]
    fn assemble_rejects_bad_beta() {
        let err = assemble_m(Array2::eye(2).view(), array![1.0, 0.0].view()).unwrap_err();
        assert!(matches!(err, Error::InvalidNoise { index: 1, .. }));
    }

    #[test]
    fn cross_output_entries_are_inactive() {
        let mut m = CouplingMatrix::zeros(4).unwrap();
        assert!(!m.is_active(2, 3));
        m.set(2, 3, 5.0);
        assert_eq!(m.get(3, 2), 0.0);
        // 4x4: 10 pairs i<=j minus the single cross-output pair
        assert_eq!(m.n_active(), 9);
    }

    #[test]
    fn params_round_trip_and_symmetry() {
        let mut m = CouplingMatrix::zeros(4).unwrap();
        let p: Vec<f64> = (0..m.n_active()).map(|k| k as f64 - 3.0).collect();
        m.set_params(&p).unwrap();
        assert_eq!(m.params(), p);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        m.set_active(0, 1, false);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.n_active(), 8);
        assert!(m.set_params(&p).is_err());
    }

    #[test]
    fn odd_sample_rejected() {
        assert!(IntensitySample::new(vec![0.1, 0.2, 0.3]).is_err());
        let s = IntensitySample::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(s.input(), &[0.1, 0.2]);
        assert_eq!(s.output(), &[0.3, 0.4]);
    }

    #[test]
    fn swap_is_involution() {
        let data = Array2::from_shape_fn((5, 6), |(i, j)| (i * 6 + j) as f64);
        let set = SampleSet::new(data).unwrap();
        let twice = set.swap_halves().swap_halves();
        assert_eq!(set, twice);
        assert_eq!(set.swap_halves().sample(0).to_vec(), vec![3.0, 4.0, 5.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn from_parts_rejects_asymmetry() {
        let mut e = Array2::zeros((2, 2));
        e[[0, 1]] = 1.0;
        assert!(CouplingMatrix::from_parts(e, Array2::from_elem((2, 2), true)).is_err());
    }
}
