//! Synthetic data: factor draws, the non-Gaussian simulation laws, the
//! temporal-basis continuous tensor, missing-data patterns and mixed-noise
//! image corruption.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Beta, Distribution, Exp, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{DenseTensor, Entry, FactorSet, MultiIndex, SparseTensor};

/// Law for factor entries.
#[derive(Clone, Debug, PartialEq)]
pub enum FactorLaw {
    /// i.i.d. `Uni(0, 1)`.
    Uniform,
    /// Rows i.i.d. `N(mean, var·I)`; `mean` has length `R`.
    Gaussian { mean: Vec<f64>, var: f64 },
}

pub fn gen_factors(dims: &[usize], rank: usize, law: &FactorLaw, seed: u64) -> Result<FactorSet> {
    if dims.is_empty() || dims.contains(&0) || rank == 0 {
        return Err(Error::Parameter(format!("bad factor shape {dims:?} x {rank}")));
    }
    let mut out = Vec::with_capacity(dims.len());
    for (d, &n) in dims.iter().enumerate() {
        let mut rng = rng::stream(seed, "factors", &[d as u64]);
        let m = match law {
            FactorLaw::Uniform => {
                let u = Uniform::new(0.0, 1.0).expect("valid range");
                Array2::from_shape_simple_fn((n, rank), || u.sample(&mut rng))
            }
            FactorLaw::Gaussian { mean, var } => {
                if mean.len() != rank || !(*var > 0.0) {
                    return Err(Error::Parameter("gaussian law needs a rank-length mean and var > 0".into()));
                }
                let sd = var.sqrt();
                Array2::from_shape_fn((n, rank), |(_, r)| mean[r] + sd * rng.sample::<f64, _>(StandardNormal))
            }
        };
        out.push(m);
    }
    FactorSet::new(out)
}

/// Factors of the continuous simulation: first-mode rows `N([0, 2], 2I)`,
/// second-mode rows `N([1, 1], 2I)`.
pub fn continuous_factors(dims: [usize; 2], seed: u64) -> Result<FactorSet> {
    let laws = [
        FactorLaw::Gaussian { mean: vec![0.0, 2.0], var: 2.0 },
        FactorLaw::Gaussian { mean: vec![1.0, 1.0], var: 2.0 },
    ];
    let mut mats = Vec::with_capacity(2);
    for (d, law) in laws.iter().enumerate() {
        let z = gen_factors(&[dims[d]], 2, law, rng::derive_seed(seed, "continuous-mode", &[d as u64]))?;
        mats.push(z.matrices()[0].clone());
    }
    FactorSet::new(mats)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimLaw {
    /// `Beta(m, 5)`.
    Beta,
    /// `0.6·N(cos m, 0.1²) + 0.4·N(sin m, 0.25²)`.
    Mog,
    /// `Exp(rate m)`.
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub dims: Vec<usize>,
    pub rank: usize,
    pub law: SimLaw,
    pub samples: usize,
    pub seed: u64,
}

impl SimSpec {
    /// Two-mode 8 x 8, rank 5, 200 samples per entry.
    pub fn standard(law: SimLaw, seed: u64) -> Self {
        Self { dims: vec![8, 8], rank: 5, law, samples: 200, seed }
    }
}

/// Sum over rank of the product of gathered factor rows.
pub fn cp_value(z: &FactorSet, index: &MultiIndex) -> Result<f64> {
    index.check(&z.dims())?;
    Ok((0..z.rank())
        .map(|r| z.matrices().iter().zip(index.coords()).map(|(m, &i)| m[[i, r]]).product::<f64>())
        .sum())
}

/// Density of the simulation law at `x` for parameter `m`.
pub fn sim_density(law: SimLaw, m: f64, x: f64) -> f64 {
    use statrs::distribution::{Beta as BetaPdf, Continuous, Exp as ExpPdf, Normal as NormalPdf};
    match law {
        SimLaw::Mog => {
            let a = NormalPdf::new(m.cos(), 0.1).expect("valid");
            let b = NormalPdf::new(m.sin(), 0.25).expect("valid");
            0.6 * a.pdf(x) + 0.4 * b.pdf(x)
        }
        SimLaw::Exponential => ExpPdf::new(m).map_or(0.0, |d| d.pdf(x)),
        SimLaw::Beta => {
            if !(0.0..=1.0).contains(&x) {
                return 0.0;
            }
            BetaPdf::new(m, 5.0).map_or(0.0, |d| d.pdf(x))
        }
    }
}

/// `spec.samples` draws for every entry of the tensor, with `m` from `z`.
pub fn gen_entry_samples(z: &FactorSet, spec: &SimSpec) -> Result<SparseTensor> {
    let dims = z.dims();
    if dims != spec.dims || z.rank() != spec.rank {
        return Err(Error::Parameter(format!("factors {dims:?} x {} do not match spec {:?} x {}", z.rank(), spec.dims, spec.rank)));
    }
    let total: usize = dims.iter().product();
    let mut entries = Vec::with_capacity(total * spec.samples);
    let mut rng = rng::stream(spec.seed, "entry-samples", &[]);
    for lin in 0..total {
        let idx = MultiIndex::from_linear(lin, &dims);
        let m = cp_value(z, &idx)?;
        let bad = || Error::Parameter(format!("non-positive parameter {m} at {idx}"));
        match spec.law {
            SimLaw::Beta => {
                let d = Beta::new(m, 5.0).map_err(|_| bad())?;
                for _ in 0..spec.samples {
                    entries.push(Entry::new(idx.clone(), d.sample(&mut rng)));
                }
            }
            SimLaw::Exponential => {
                if !(m > 0.0) {
                    return Err(bad());
                }
                let d = Exp::new(m).map_err(|_| bad())?;
                for _ in 0..spec.samples {
                    entries.push(Entry::new(idx.clone(), d.sample(&mut rng)));
                }
            }
            SimLaw::Mog => {
                let a = Normal::new(m.cos(), 0.1).expect("valid");
                let b = Normal::new(m.sin(), 0.25).expect("valid");
                for _ in 0..spec.samples {
                    let v = if rng.random::<f64>() < 0.6 { a.sample(&mut rng) } else { b.sample(&mut rng) };
                    entries.push(Entry::new(idx.clone(), v));
                }
            }
        }
    }
    SparseTensor::with_repeats(dims, entries)
}

/// The four temporal bases `(ω11, ω12, ω21, ω22)` at `t`.
pub fn temporal_bases(t: f64) -> [f64; 4] {
    let a = 2.0 * PI * t;
    let b = 5.0 * PI * t;
    [a.sin(), a.cos(), a.sin().powi(2), b.cos() * b.sin().powi(2)]
}

/// `T` evenly spaced stamps covering `[0, 1]`.
pub fn uniform_times(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|k| if k + 1 == n { 1.0 } else { k as f64 / (n - 1) as f64 }).collect(),
    }
}

/// `x_ij(t) = Σ_{r1,r2} z¹_{i,r1}·z²_{j,r2}·ω_{r1 r2}(t)` at every entry and time.
pub fn gen_continuous(z: &FactorSet, times: &[f64]) -> Result<SparseTensor> {
    if z.order() != 2 || z.rank() != 2 {
        return Err(Error::Parameter("continuous tensor needs two modes of rank 2".into()));
    }
    let dims = z.dims();
    let (z1, z2) = (&z.matrices()[0], &z.matrices()[1]);
    let mut entries = Vec::with_capacity(dims[0] * dims[1] * times.len());
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for &t in times {
                let w = temporal_bases(t);
                let mut v = 0.0;
                for r1 in 0..2 {
                    for r2 in 0..2 {
                        v += z1[[i, r1]] * z2[[j, r2]] * w[2 * r1 + r2];
                    }
                }
                entries.push(Entry::timed([i, j], v, t));
            }
        }
    }
    SparseTensor::new(dims, entries)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MissingMode {
    /// Keep `⌊rate·n⌋` uniformly chosen entries for training.
    Random { rate: f64 },
    /// Per series, `starts` bursts each hiding `⌈fraction·T⌉` consecutive stamps.
    Burst { starts: usize, fraction: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: SparseTensor,
    pub test: SparseTensor,
    /// Positions in the source tensor.
    pub train_positions: Vec<usize>,
    pub test_positions: Vec<usize>,
}

pub fn apply_missing(data: &SparseTensor, mode: MissingMode, seed: u64) -> Result<Split> {
    let n = data.len();
    let mut rng = rng::stream(seed, "missing", &[]);
    let mut hidden = vec![false; n];
    match mode {
        MissingMode::Random { rate } => {
            if !(rate > 0.0 && rate < 1.0) {
                return Err(Error::Parameter(format!("sampling rate must be in (0, 1), got {rate}")));
            }
            let keep = (rate * n as f64).floor() as usize;
            hidden.iter_mut().for_each(|h| *h = true);
            for p in sample(&mut rng, n, keep) {
                hidden[p] = false;
            }
        }
        MissingMode::Burst { starts, fraction } => {
            if !data.is_timed() {
                return Err(Error::Parameter("burst missingness needs timestamps".into()));
            }
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::Parameter(format!("burst fraction must be in (0, 1), got {fraction}")));
            }
            let mut series: std::collections::BTreeMap<Vec<usize>, Vec<usize>> = Default::default();
            for (p, e) in data.entries().iter().enumerate() {
                series.entry(e.index.coords().to_vec()).or_default().push(p);
            }
            for positions in series.values_mut() {
                positions.sort_by(|&a, &b| data.entries()[a].time.unwrap().total_cmp(&data.entries()[b].time.unwrap()));
                let t = positions.len();
                let len = (fraction * t as f64).ceil() as usize;
                for _ in 0..starts {
                    let s = rng.random_range(0..t);
                    for &p in &positions[s..(s + len).min(t)] {
                        hidden[p] = true;
                    }
                }
            }
        }
    }
    let train_positions: Vec<usize> = (0..n).filter(|&p| !hidden[p]).collect();
    let test_positions: Vec<usize> = (0..n).filter(|&p| hidden[p]).collect();
    if train_positions.is_empty() {
        return Err(Error::Parameter("missing pattern leaves no training entries".into()));
    }
    Ok(Split {
        train: data.subset(&train_positions),
        test: data.subset(&test_positions),
        train_positions,
        test_positions,
    })
}

/// Mixed-noise recipe for `H x W x B` images (a 2-D image is one band).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCaseSpec {
    pub gaussian_std: f64,
    /// Fraction of pixels replaced by 0 or 1.
    pub impulse_rate: f64,
    /// Fraction of rows striped within each striped band.
    pub stripe_rows: f64,
    /// Fraction of bands carrying stripes.
    pub stripe_bands: f64,
    pub dead_lines: bool,
}

impl NoiseCaseSpec {
    pub fn none() -> Self {
        Self { gaussian_std: 0.0, impulse_rate: 0.0, stripe_rows: 0.0, stripe_bands: 0.0, dead_lines: false }
    }

    /// Denoising cases 1–6.
    pub fn case(id: u8) -> Result<Self> {
        let base = Self { gaussian_std: 0.1, impulse_rate: 0.1, ..Self::none() };
        let stripes = Self { stripe_rows: 0.1, stripe_bands: 0.4, ..base.clone() };
        Ok(match id {
            1 => Self { gaussian_std: 0.2, ..Self::none() },
            2 => base,
            3 => Self { dead_lines: true, ..base },
            4 => stripes,
            5 => Self { dead_lines: true, ..stripes },
            6 => Self { impulse_rate: 0.1, ..Self::none() },
            _ => return Err(Error::Parameter(format!("noise case must be 1-6, got {id}"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.impulse_rate, self.stripe_rows, self.stripe_bands];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) || !(self.gaussian_std >= 0.0) {
            return Err(Error::Parameter(format!("invalid noise spec {self:?}")));
        }
        Ok(())
    }
}

/// Corrupted image plus the positions hit by impulses.
#[derive(Clone, Debug, PartialEq)]
pub struct Corruption {
    pub image: DenseTensor,
    pub impulses: Vec<usize>,
}

fn image_shape(dims: &[usize]) -> Result<(usize, usize, usize)> {
    match dims {
        [h, w] => Ok((*h, *w, 1)),
        [h, w, b] => Ok((*h, *w, *b)),
        _ => Err(Error::Parameter(format!("images are 2-D or 3-D, got {dims:?}"))),
    }
}

/// Applies Gaussian noise, impulses, stripes and dead lines in that order.
/// Values are not clipped.
pub fn corrupt(image: &DenseTensor, spec: &NoiseCaseSpec, seed: u64) -> Result<Corruption> {
    spec.validate()?;
    let (h, w, b) = image_shape(image.dims())?;
    let at = |r: usize, c: usize, k: usize| (r * w + c) * b + k;
    let mut out = image.clone();
    let n = out.len();
    let v = out.values_mut();
    if spec.gaussian_std > 0.0 {
        let mut rng = rng::stream(seed, "gaussian", &[]);
        for x in v.iter_mut() {
            *x += spec.gaussian_std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut impulses = Vec::new();
    if spec.impulse_rate > 0.0 {
        let mut rng = rng::stream(seed, "impulse", &[]);
        let count = (spec.impulse_rate * n as f64).floor() as usize;
        impulses = sample(&mut rng, n, count).into_vec();
        impulses.sort_unstable();
        for &p in &impulses {
            v[p] = if rng.random::<bool>() { 1.0 } else { 0.0 };
        }
    }
    if spec.stripe_rows > 0.0 && spec.stripe_bands > 0.0 {
        let mut rng = rng::stream(seed, "stripes", &[]);
        let nb = (spec.stripe_bands * b as f64).round().max(1.0) as usize;
        let nr = (spec.stripe_rows * h as f64).round().max(1.0) as usize;
        let amp = Uniform::new(-0.25, 0.25).expect("valid range");
        for k in sample(&mut rng, b, nb.min(b)) {
            for r in sample(&mut rng, h, nr.min(h)) {
                let a = amp.sample(&mut rng);
                for c in 0..w {
                    v[at(r, c, k)] += a;
                }
            }
        }
    }
    if spec.dead_lines {
        let mut rng = rng::stream(seed, "dead-lines", &[]);
        for _ in 0..3 {
            let width = rng.random_range(1..=3usize).min(w);
            let c0 = rng.random_range(0..=w - width);
            for c in c0..c0 + width {
                for r in 0..h {
                    for k in 0..b {
                        v[at(r, c, k)] = 0.0;
                    }
                }
            }
        }
    }
    Ok(Corruption { image: out, impulses })
}

/// Dense CP tensor `offset + Σ_r Π_d z^d_{i_d r}` with `Uni(0, 1)` factors.
pub fn gen_low_rank(dims: &[usize], rank: usize, offset: f64, seed: u64) -> Result<DenseTensor> {
    let z = gen_factors(dims, rank, &FactorLaw::Uniform, seed)?;
    let total: usize = dims.iter().product();
    let values = (0..total)
        .map(|lin| cp_value(&z, &MultiIndex::from_linear(lin, dims)).map(|v| v + offset))
        .collect::<Result<Vec<_>>>()?;
    DenseTensor::new(dims.to_vec(), values)
}

/// Adds `±magnitude` (or `+magnitude` when `symmetric` is false) at
/// `⌊rate·n⌋` distinct positions.
pub fn add_impulses(t: &DenseTensor, rate: f64, magnitude: f64, symmetric: bool, seed: u64) -> Result<Corruption> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Parameter(format!("impulse rate must be in [0, 1], got {rate}")));
    }
    let mut rng = rng::stream(seed, "additive-impulse", &[]);
    let mut out = t.clone();
    let n = out.len();
    let mut positions = sample(&mut rng, n, (rate * n as f64).floor() as usize).into_vec();
    positions.sort_unstable();
    let v = out.values_mut();
    for &p in &positions {
        let sign = if symmetric && rng.random::<bool>() { -1.0 } else { 1.0 };
        v[p] += sign * magnitude;
    }
    Ok(Corruption { image: out, impulses: positions })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_laws() {
        let z = gen_factors(&[8, 8], 5, &FactorLaw::Uniform, 1).unwrap();
        assert_eq!(z.dims(), vec![8, 8]);
        assert_eq!(z.rank(), 5);
        assert!(z.matrices().iter().all(|m| m.iter().all(|v| (0.0..=1.0).contains(v))));
        assert_eq!(z, gen_factors(&[8, 8], 5, &FactorLaw::Uniform, 1).unwrap());

        let i = 400;
        let law = FactorLaw::Gaussian { mean: vec![0.0, 2.0], var: 2.0 };
        let z = gen_factors(&[i], 2, &law, 3).unwrap();
        let m = &z.matrices()[0];
        let bound = 3.0 * (2.0 / i as f64).sqrt();
        for (r, mu) in [0.0, 2.0].iter().enumerate() {
            let mean = m.column(r).mean().unwrap();
            assert!((mean - mu).abs() < bound, "{mean}");
        }
    }

    #[test]
    fn simulation_laws() {
        let z = gen_factors(&[3, 3], 5, &FactorLaw::Uniform, 2).unwrap();
        let beta = gen_entry_samples(&z, &SimSpec { dims: vec![3, 3], rank: 5, law: SimLaw::Beta, samples: 200, seed: 1 }).unwrap();
        assert_eq!(beta.len(), 9 * 200);
        assert!(beta.values().iter().all(|v| *v > 0.0 && *v < 1.0));
        let ex = gen_entry_samples(&z, &SimSpec { law: SimLaw::Exponential, ..SimSpec::standard(SimLaw::Beta, 1) }).unwrap_err();
        assert!(matches!(ex, Error::Parameter(_)));
        let ex = gen_entry_samples(&z, &SimSpec { dims: vec![3, 3], rank: 5, law: SimLaw::Exponential, samples: 50, seed: 1 }).unwrap();
        assert!(ex.values().iter().all(|v| *v >= 0.0));

        let n = 20_000;
        let mog = gen_entry_samples(&z, &SimSpec { dims: vec![3, 3], rank: 5, law: SimLaw::Mog, samples: n, seed: 4 }).unwrap();
        let idx = MultiIndex::from([1, 2]);
        let m = cp_value(&z, &idx).unwrap();
        let vals: Vec<f64> = mog.entries().iter().filter(|e| e.index == idx).map(|e| e.value).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let expected = 0.6 * m.cos() + 0.4 * m.sin();
        let var = 0.6 * (0.01 + m.cos().powi(2)) + 0.4 * (0.0625 + m.sin().powi(2)) - expected.powi(2);
        assert!((mean - expected).abs() < 3.0 * var.sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn densities_integrate_to_one() {
        for (law, lo, hi) in [(SimLaw::Mog, -3.0, 3.0), (SimLaw::Beta, 0.0, 1.0), (SimLaw::Exponential, 0.0, 40.0)] {
            let m = 1.3;
            let n = 200_000;
            let h = (hi - lo) / n as f64;
            let total: f64 = (0..n).map(|k| sim_density(law, m, lo + (k as f64 + 0.5) * h) * h).sum();
            assert!((total - 1.0).abs() < 1e-4, "{law:?}: {total}");
        }
    }

    #[test]
    fn continuous_formula() {
        let z = FactorSet::new(vec![ndarray::array![[1.0, 0.0]], ndarray::array![[1.0, 0.0]]]).unwrap();
        let t = gen_continuous(&z, &[0.25]).unwrap();
        assert!((t.entries()[0].value - 1.0).abs() < 1e-15);
        let ones = FactorSet::new(vec![ndarray::array![[1.0, 1.0]], ndarray::array![[1.0, 1.0]]]).unwrap();
        assert!((gen_continuous(&ones, &[0.0]).unwrap().entries()[0].value - 1.0).abs() < 1e-15);
        let zero = FactorSet::zeros(&[2, 3], 2).unwrap();
        assert!(gen_continuous(&zero, &uniform_times(10)).unwrap().values().iter().all(|v| *v == 0.0));
        assert!(gen_continuous(&FactorSet::zeros(&[2, 3], 3).unwrap(), &[0.0]).is_err());
        let ts = uniform_times(200);
        assert_eq!((ts[0], ts[199], ts.len()), (0.0, 1.0, 200));
    }

    #[test]
    fn random_split_counts() {
        let dense = DenseTensor::zeros(vec![64, 64, 3]).unwrap();
        let data = SparseTensor::from_dense(&dense);
        let s = apply_missing(&data, MissingMode::Random { rate: 0.1 }, 0).unwrap();
        assert_eq!(s.train.len(), (0.1 * 12288.0f64).floor() as usize);
        assert_eq!(s.train.len() + s.test.len(), 12288);
        let mut all: Vec<usize> = s.train_positions.iter().chain(&s.test_positions).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..12288).collect::<Vec<_>>());
        assert!(apply_missing(&data, MissingMode::Random { rate: 1e-9 }, 0).is_err());
    }

    #[test]
    fn burst_split_bounds() {
        let z = gen_factors(&[3, 2], 2, &FactorLaw::Uniform, 0).unwrap();
        let data = gen_continuous(&z, &uniform_times(200)).unwrap();
        let s = apply_missing(&data, MissingMode::Burst { starts: 4, fraction: 0.05 }, 7).unwrap();
        assert!(!s.test.is_empty());
        for i in 0..3 {
            for j in 0..2 {
                let hidden = s.test.entries().iter().filter(|e| e.index.coords() == [i, j]).count();
                assert!(hidden <= 40 && hidden >= 10, "{hidden}");
            }
        }
        let a = apply_missing(&data, MissingMode::Burst { starts: 4, fraction: 0.05 }, 7).unwrap();
        assert_eq!(a, s);
    }

    #[test]
    fn noise_cases() {
        let gray = DenseTensor::new(vec![512, 512], vec![0.5; 512 * 512]).unwrap();
        let c1 = corrupt(&gray, &NoiseCaseSpec::case(1).unwrap(), 0).unwrap();
        let n = gray.len() as f64;
        let mean = c1.image.values().iter().sum::<f64>() / n;
        let sd = (c1.image.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd - 0.2).abs() / 0.2 < 0.02, "{sd}");

        let img = DenseTensor::new(vec![40, 30, 5], (0..6000).map(|k| (k % 97) as f64 / 97.0).collect()).unwrap();
        let c6 = corrupt(&img, &NoiseCaseSpec::case(6).unwrap(), 3).unwrap();
        assert_eq!(c6.impulses.len(), 600);
        let changed = c6.image.values().iter().zip(img.values()).filter(|(a, b)| a != b).count();
        assert!(changed <= 600);
        assert!(c6.impulses.iter().all(|&p| c6.image.values()[p] == 0.0 || c6.image.values()[p] == 1.0));

        assert_eq!(corrupt(&img, &NoiseCaseSpec::none(), 1).unwrap().image, img);
        let c5 = corrupt(&img, &NoiseCaseSpec::case(5).unwrap(), 9).unwrap();
        assert_eq!(c5, corrupt(&img, &NoiseCaseSpec::case(5).unwrap(), 9).unwrap());
        assert!(NoiseCaseSpec::case(7).is_err());
    }

    #[test]
    fn low_rank_and_impulses() {
        let t = gen_low_rank(&[4, 5, 6], 3, 0.5, 1).unwrap();
        assert!(t.values().iter().all(|v| *v >= 0.5 && *v <= 3.5));
        let c = add_impulses(&t, 0.1, 1.0, false, 2).unwrap();
        assert_eq!(c.impulses.len(), 12);
        for (k, (a, b)) in c.image.values().iter().zip(t.values()).enumerate() {
            let hit = c.impulses.binary_search(&k).is_ok();
            assert_eq!(a - b != 0.0, hit);
        }
    }
}
