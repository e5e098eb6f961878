//! Tensor containers, factor storage and the shared noise schedule.

use std::collections::HashSet;
use std::fmt;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Position of one tensor entry, one 0-based coordinate per mode.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn new(coords: impl Into<Vec<usize>>) -> Self {
        Self(coords.into())
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[usize] {
        &self.0
    }

    /// Checks the index against `dims`.
    pub fn check(&self, dims: &[usize]) -> Result<()> {
        if self.0.len() != dims.len() {
            return Err(Error::Index(format!(
                "index {:?} has order {}, tensor has order {}",
                self.0,
                self.0.len(),
                dims.len()
            )));
        }
        for (d, (&c, &n)) in self.0.iter().zip(dims).enumerate() {
            if c >= n {
                return Err(Error::Index(format!(
                    "coordinate {c} out of range for mode {d} of size {n}"
                )));
            }
        }
        Ok(())
    }

    /// Row-major linear offset.
    pub fn linear(&self, dims: &[usize]) -> usize {
        self.0
            .iter()
            .zip(dims)
            .fold(0, |acc, (&c, &n)| acc * n + c)
    }

    /// Inverse of [`MultiIndex::linear`].
    pub fn from_linear(mut offset: usize, dims: &[usize]) -> Self {
        let mut coords = vec![0; dims.len()];
        for d in (0..dims.len()).rev() {
            coords[d] = offset % dims[d];
            offset /= dims[d];
        }
        Self(coords)
    }

    /// Each coordinate mapped to `[0, 1]` by `i_d / (I_d - 1)`; singleton modes map to 0.
    pub fn normalized(&self, dims: &[usize]) -> Vec<f64> {
        self.0
            .iter()
            .zip(dims)
            .map(|(&c, &n)| if n > 1 { c as f64 / (n - 1) as f64 } else { 0.0 })
            .collect()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

impl From<Vec<usize>> for MultiIndex {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

impl<const N: usize> From<[usize; N]> for MultiIndex {
    fn from(v: [usize; N]) -> Self {
        Self(v.to_vec())
    }
}

/// One observed value.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub index: MultiIndex,
    pub value: f64,
    pub time: Option<f64>,
}

impl Entry {
    pub fn new(index: impl Into<MultiIndex>, value: f64) -> Self {
        Self { index: index.into(), value, time: None }
    }

    pub fn timed(index: impl Into<MultiIndex>, value: f64, time: f64) -> Self {
        Self { index: index.into(), value, time: Some(time) }
    }
}

/// Observations over an index set.
///
/// Built with [`SparseTensor::new`], each (index, timestamp) pair appears once.
/// [`SparseTensor::with_repeats`] admits several draws of the same entry,
/// which is how i.i.d. per-entry samples are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTensor {
    dims: Vec<usize>,
    entries: Vec<Entry>,
    timed: bool,
    repeats: bool,
}

impl SparseTensor {
    pub fn new(dims: Vec<usize>, entries: Vec<Entry>) -> Result<Self> {
        Self::build(dims, entries, false)
    }

    pub fn with_repeats(dims: Vec<usize>, entries: Vec<Entry>) -> Result<Self> {
        Self::build(dims, entries, true)
    }

    fn build(dims: Vec<usize>, entries: Vec<Entry>, repeats: bool) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::Parameter(format!("dims must be positive, got {dims:?}")));
        }
        let timed = entries.first().is_some_and(|e| e.time.is_some());
        let mut seen = HashSet::new();
        for e in &entries {
            e.index.check(&dims)?;
            if e.time.is_some() != timed {
                return Err(Error::Parameter(
                    "timestamps must be present on all entries or on none".into(),
                ));
            }
            if let Some(t) = e.time {
                if !t.is_finite() {
                    return Err(Error::Parameter(format!("non-finite timestamp at {}", e.index)));
                }
            }
            if !repeats && !seen.insert((e.index.clone(), e.time.map(f64::to_bits))) {
                return Err(Error::Duplicate(e.index.0.clone()));
            }
        }
        Ok(Self { dims, entries, timed, repeats })
    }

    /// Every position of a dense tensor as an observation.
    pub fn from_dense(dense: &DenseTensor) -> Self {
        let entries = dense.enumerate().map(|(i, v)| Entry::new(i, v)).collect();
        Self { dims: dense.dims().to_vec(), entries, timed: false, repeats: false }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_timed(&self) -> bool {
        self.timed
    }

    pub fn allows_repeats(&self) -> bool {
        self.repeats
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }

    /// Same index set and timestamps, new values.
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.entries.len() {
            return Err(Error::Argument(format!(
                "expected {} values, got {}",
                self.entries.len(),
                values.len()
            )));
        }
        let mut out = self.clone();
        for (e, &v) in out.entries.iter_mut().zip(values) {
            e.value = v;
        }
        Ok(out)
    }

    /// Keeps the entries whose position in `entries()` is listed.
    pub fn subset(&self, positions: &[usize]) -> Self {
        let entries = positions.iter().map(|&p| self.entries[p].clone()).collect();
        Self { dims: self.dims.clone(), entries, timed: self.timed, repeats: self.repeats }
    }
}

/// Row-major dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::Parameter(format!("dims must be positive, got {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != values.len() {
            return Err(Error::Parameter(format!(
                "dims {dims:?} need {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![0.0; n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, index: &MultiIndex) -> Result<f64> {
        index.check(&self.dims)?;
        Ok(self.values[index.linear(&self.dims)])
    }

    pub fn set(&mut self, index: &MultiIndex, value: f64) -> Result<()> {
        index.check(&self.dims)?;
        let at = index.linear(&self.dims);
        self.values[at] = value;
        Ok(())
    }

    /// All (index, value) pairs in row-major order.
    pub fn enumerate(&self) -> impl Iterator<Item = (MultiIndex, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(k, &v)| (MultiIndex::from_linear(k, &self.dims), v))
    }
}

/// Scatters values into a zero-filled dense tensor. Repeated indices are rejected.
pub fn fold(entries: &[(MultiIndex, f64)], dims: &[usize]) -> Result<DenseTensor> {
    let mut out = DenseTensor::zeros(dims.to_vec())?;
    let mut written = vec![false; out.len()];
    for (index, value) in entries {
        index.check(dims)?;
        let at = index.linear(dims);
        if written[at] {
            return Err(Error::Duplicate(index.0.clone()));
        }
        written[at] = true;
        out.values[at] = *value;
    }
    Ok(out)
}

/// Learnable per-mode factor matrices, matrix `d` of shape `I_d x R`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorSet {
    matrices: Vec<Array2<f64>>,
    rank: usize,
}

impl FactorSet {
    pub fn new(matrices: Vec<Array2<f64>>) -> Result<Self> {
        let rank = matrices
            .first()
            .map(|m| m.ncols())
            .ok_or_else(|| Error::Parameter("factor set needs at least one mode".into()))?;
        if rank == 0 {
            return Err(Error::Parameter("rank must be positive".into()));
        }
        for (d, m) in matrices.iter().enumerate() {
            if m.ncols() != rank {
                return Err(Error::Parameter(format!(
                    "mode {d} has rank {}, expected {rank}",
                    m.ncols()
                )));
            }
            if m.nrows() == 0 {
                return Err(Error::Parameter(format!("mode {d} has no rows")));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter(format!("mode {d} has non-finite values")));
            }
        }
        Ok(Self { matrices, rank })
    }

    pub fn zeros(dims: &[usize], rank: usize) -> Result<Self> {
        Self::new(dims.iter().map(|&n| Array2::zeros((n, rank))).collect())
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn order(&self) -> usize {
        self.matrices.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.matrices.iter().map(|m| m.nrows()).collect()
    }

    pub fn matrices(&self) -> &[Array2<f64>] {
        &self.matrices
    }

    pub fn matrices_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.matrices
    }

    /// Concatenated rows `z^1_{i_1} .. z^D_{i_D}`, length `D * R`.
    pub fn gather(&self, index: &MultiIndex) -> Result<Vec<f64>> {
        index.check(&self.dims())?;
        let mut out = Vec::with_capacity(self.order() * self.rank);
        for (m, &row) in self.matrices.iter().zip(index.coords()) {
            out.extend(m.row(row).iter());
        }
        Ok(out)
    }

    /// Writes a gathered vector back to the rows it came from.
    pub fn scatter(&mut self, index: &MultiIndex, values: &[f64]) -> Result<()> {
        index.check(&self.dims())?;
        if values.len() != self.order() * self.rank {
            return Err(Error::Argument(format!(
                "expected {} values, got {}",
                self.order() * self.rank,
                values.len()
            )));
        }
        let rank = self.rank;
        for (d, (m, &row)) in self.matrices.iter_mut().zip(&index.0).enumerate() {
            for (dst, src) in m.row_mut(row).iter_mut().zip(&values[d * rank..(d + 1) * rank]) {
                *dst = *src;
            }
        }
        Ok(())
    }
}

/// Gaussian perturbation scales, stored largest first (annealing order).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Geometric sequence from `sigma_max` down to `sigma_min` over `levels` scales.
    pub fn geometric(sigma_max: f64, sigma_min: f64, levels: usize) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()) {
            return Err(Error::Parameter(format!(
                "need sigma_max > sigma_min > 0, got ({sigma_max}, {sigma_min})"
            )));
        }
        if levels < 2 {
            return Err(Error::Parameter(format!("need at least 2 levels, got {levels}")));
        }
        let ratio = sigma_min / sigma_max;
        let last = (levels - 1) as f64;
        let mut sigmas: Vec<f64> = (0..levels)
            .map(|l| sigma_max * ratio.powf(l as f64 / last))
            .collect();
        sigmas[0] = sigma_max;
        sigmas[levels - 1] = sigma_min;
        Ok(Self { sigmas })
    }

    /// One fixed scale.
    pub fn single(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { sigmas: vec![sigma] })
    }

    /// Arbitrary strictly decreasing positive scales.
    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::Parameter("empty noise schedule".into()));
        }
        if sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Parameter("noise scales must be positive".into()));
        }
        if sigmas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Parameter("noise scales must strictly decrease".into()));
        }
        Ok(Self { sigmas })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigmas[self.sigmas.len() - 1]
    }
}

/// Free-function form of [`NoiseSchedule::geometric`].
pub fn make_noise_schedule(sigma_max: f64, sigma_min: f64, levels: usize) -> Result<NoiseSchedule> {
    NoiseSchedule::geometric(sigma_max, sigma_min, levels)
}

/// Free-function form of [`FactorSet::gather`].
pub fn gather_factors(factors: &FactorSet, index: &MultiIndex) -> Result<Vec<f64>> {
    factors.gather(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn schedule_endpoints_and_second_level() {
        let s = make_noise_schedule(0.2, 0.01, 10).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s.sigma_max(), 0.2);
        assert_eq!(s.sigma_min(), 0.01);
        let expected = 0.2 * 0.05f64.powf(1.0 / 9.0);
        assert!((s.sigmas()[1] - expected).abs() < 1e-15);
        assert!((s.sigmas()[1] - 0.14338).abs() < 1e-5);
    }

    #[test]
    fn schedule_rejects_bad_parameters() {
        assert!(make_noise_schedule(0.2, 0.2, 2).is_err());
        assert!(make_noise_schedule(0.1, 0.2, 5).is_err());
        assert!(make_noise_schedule(0.2, 0.01, 1).is_err());
        assert!(make_noise_schedule(0.2, 0.0, 4).is_err());
    }

    proptest! {
        #[test]
        fn schedule_is_geometric(max in 0.01f64..10.0, frac in 0.001f64..0.9, levels in 2usize..40) {
            let min = max * frac;
            let s = make_noise_schedule(max, min, levels).unwrap();
            prop_assert_eq!(s.sigma_max(), max);
            prop_assert_eq!(s.sigma_min(), min);
            let sig = s.sigmas();
            let r0 = sig[1] / sig[0];
            for w in sig.windows(2) {
                prop_assert!(w[1] < w[0]);
                prop_assert!(((w[1] / w[0]) - r0).abs() <= 1e-12 * r0.abs());
            }
        }

        #[test]
        fn gather_scatter_round_trip(vals in proptest::collection::vec(-5.0f64..5.0, 6)) {
            let mut z = FactorSet::zeros(&[3, 4, 2], 2).unwrap();
            let i = MultiIndex::from([2, 1, 0]);
            z.scatter(&i, &vals).unwrap();
            prop_assert_eq!(z.gather(&i).unwrap(), vals);
        }

        #[test]
        fn fold_inverts_enumerate(vals in proptest::collection::vec(-1.0f64..1.0, 12)) {
            let dense = DenseTensor::new(vec![3, 2, 2], vals).unwrap();
            let listed: Vec<_> = dense.enumerate().collect();
            prop_assert_eq!(fold(&listed, dense.dims()).unwrap(), dense);
        }
    }

    #[test]
    fn gather_concatenates_rows() {
        let z = FactorSet::new(vec![array![[1.0, 2.0], [0.0, 0.0]], array![[0.0, 0.0], [3.0, 4.0]]])
            .unwrap();
        let i = MultiIndex::from([0, 1]);
        assert_eq!(gather_factors(&z, &i).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(z.gather(&i).unwrap(), z.gather(&i).unwrap());
        assert!(matches!(z.gather(&MultiIndex::from([2, 0])), Err(Error::Index(_))));
    }

    #[test]
    fn gather_single_mode_is_row() {
        let z = FactorSet::new(vec![array![[0., 0., 0.], [1., 1., 1.], [7., 8., 9.]]]).unwrap();
        assert_eq!(z.gather(&MultiIndex::from([2])).unwrap(), vec![7.0, 8.0, 9.0]);
    }

    #[test]
    fn fold_examples() {
        let t = fold(&[(MultiIndex::from([0, 0]), 5.0)], &[2, 2]).unwrap();
        assert_eq!(t.values(), &[5.0, 0.0, 0.0, 0.0]);
        let empty = fold(&[], &[2, 2]).unwrap();
        assert!(empty.values().iter().all(|&v| v == 0.0));
        let dup = fold(
            &[(MultiIndex::from([0, 0]), 1.0), (MultiIndex::from([0, 0]), 2.0)],
            &[2, 2],
        );
        assert!(matches!(dup, Err(Error::Duplicate(_))));
    }

    #[test]
    fn sparse_tensor_invariants() {
        let dup = SparseTensor::new(
            vec![2, 2],
            vec![Entry::new([0, 0], 1.0), Entry::new([0, 0], 2.0)],
        );
        assert!(matches!(dup, Err(Error::Duplicate(_))));
        let rep = SparseTensor::with_repeats(
            vec![2, 2],
            vec![Entry::new([0, 0], 1.0), Entry::new([0, 0], 2.0)],
        );
        assert_eq!(rep.unwrap().len(), 2);
        let mixed = SparseTensor::new(
            vec![2],
            vec![Entry::timed([0], 1.0, 0.5), Entry::new([1], 2.0)],
        );
        assert!(mixed.is_err());
        assert!(SparseTensor::new(vec![2], vec![Entry::new([2], 0.0)]).is_err());
        let timed = SparseTensor::new(
            vec![2],
            vec![Entry::timed([0], 1.0, 0.1), Entry::timed([0], 2.0, 0.2)],
        )
        .unwrap();
        assert!(timed.is_timed());
    }

    #[test]
    fn linear_offsets_round_trip() {
        let dims = [3, 4, 5];
        for k in 0..60 {
            let i = MultiIndex::from_linear(k, &dims);
            assert_eq!(i.linear(&dims), k);
        }
        assert_eq!(MultiIndex::from([1, 0]).normalized(&[3, 1]), vec![0.5, 0.0]);
    }
}
