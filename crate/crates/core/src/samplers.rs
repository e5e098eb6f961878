//! Posterior sampling of entry values under a trained energy: annealed
//! Langevin dynamics for continuous data and grid search for discrete data.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::autodiff::Tape;
use crate::energy::{score, EnergyFunction, Query};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::NoiseSchedule;

#[derive(Clone, Debug, PartialEq)]
pub struct LangevinConfig {
    pub schedule: NoiseSchedule,
    /// Step scale `ε`; level `l` uses `α_l = ε·σ_l²/σ_min²`.
    pub epsilon: f64,
    /// Steps per noise level.
    pub steps: usize,
    pub seed: u64,
    /// One noiseless step `x -= σ_min²·∂E/∂x` after the last level.
    pub final_denoise: bool,
}

impl LangevinConfig {
    pub fn new(schedule: NoiseSchedule, epsilon: f64, steps: usize) -> Self {
        Self { schedule, epsilon, steps, seed: 0, final_denoise: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("langevin epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// `α_l` for every level, in annealing order.
    pub fn step_sizes(&self) -> Vec<f64> {
        let min2 = self.schedule.sigma_min().powi(2);
        self.schedule.sigmas().iter().map(|s| self.epsilon * s * s / min2).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for GridConfig {
    /// 8-bit image levels.
    fn default() -> Self {
        Self { lo: 0.0, hi: 1.0, points: 256 }
    }
}

impl GridConfig {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        let g = Self { lo, hi, points };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) || self.points < 2 {
            return Err(Error::Config(format!("grid needs lo < hi and at least 2 points, got {self:?}")));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let step = (self.hi - self.lo) / (self.points - 1) as f64;
        (0..self.points)
            .map(|g| if g + 1 == self.points { self.hi } else { self.lo + g as f64 * step })
            .collect()
    }
}

/// Sampled values plus the chains that failed (position, message).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleOutput {
    pub values: Vec<f64>,
    pub failures: Vec<(usize, String)>,
}

/// Runs `f` over consecutive chunks of `0..n`, on `workers` threads when more than one.
pub(crate) fn map_chunks<T, F>(n: usize, chunk: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> Result<T> + Sync,
{
    let ranges: Vec<_> = (0..n).step_by(chunk.max(1)).map(|s| s..(s + chunk).min(n)).collect();
    if workers <= 1 {
        return ranges.into_iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Sampler(format!("thread pool: {e}")))?;
    pool.install(|| ranges.into_par_iter().map(&f).collect())
}

/// One Langevin update with a caller-supplied standard-normal draw.
pub fn langevin_update(x: f64, grad: f64, alpha: f64, xi: f64) -> f64 {
    x - alpha * grad + (2.0 * alpha).sqrt() * xi
}

/// `x − α·∂E/∂x + √(2α)·ξ` for a single entry.
pub fn langevin_step<E: EnergyFunction, R: Rng>(model: &E, query: &Query, x: f64, alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(Error::Sampler(format!("step size must be non-negative, got {alpha}")));
    }
    let g = crate::energy::scores(model, std::slice::from_ref(query), &[x])?[0];
    let xi: f64 = rng.sample(StandardNormal);
    let out = langevin_update(x, g, alpha, xi);
    if !out.is_finite() {
        return Err(Error::Sampler(format!("non-finite value at {}", query.index)));
    }
    Ok(out)
}

/// Per-chain RNG keyed on the query, with an occurrence counter so repeated
/// queries get independent chains.
fn chain_streams(seed: u64, queries: &[Query]) -> Vec<ChaCha8Rng> {
    let mut seen: HashMap<(Vec<usize>, Option<u64>), u64> = HashMap::new();
    queries
        .iter()
        .map(|q| {
            let key = (q.index.coords().to_vec(), q.time.map(f64::to_bits));
            let k = seen.entry(key).or_insert(0);
            let mut parts: Vec<u64> = q.index.coords().iter().map(|&c| c as u64).collect();
            parts.push(q.time.map_or(u64::MAX, f64::to_bits));
            parts.push(*k);
            *k += 1;
            rng::stream(seed, "langevin", &parts)
        })
        .collect()
}

const SAMPLE_CHUNK: usize = 4096;

/// Annealed Langevin dynamics from `init`, one independent chain per query.
///
/// A chain that produces a non-finite value is frozen at its last finite
/// value and reported in `failures`.
pub fn anneal<E: EnergyFunction>(
    model: &E,
    queries: &[Query],
    init: &[f64],
    cfg: &LangevinConfig,
    workers: usize,
) -> Result<SampleOutput> {
    cfg.validate()?;
    if queries.len() != init.len() {
        return Err(Error::Argument(format!("{} queries but {} initial values", queries.len(), init.len())));
    }
    if queries.is_empty() {
        return Ok(SampleOutput::default());
    }
    let alphas = cfg.step_sizes();
    let sigma_min2 = cfg.schedule.sigma_min().powi(2);
    let mut streams = chain_streams(cfg.seed, queries);
    let chunk_rngs: Vec<std::sync::Mutex<Vec<ChaCha8Rng>>> = {
        let mut out = Vec::new();
        while !streams.is_empty() {
            let rest = streams.split_off(SAMPLE_CHUNK.min(streams.len()));
            out.push(std::sync::Mutex::new(std::mem::replace(&mut streams, rest)));
        }
        out
    };
    let chunks = map_chunks(queries.len(), SAMPLE_CHUNK, workers, |range| {
        let mut rngs = chunk_rngs[range.start / SAMPLE_CHUNK].lock().expect("unshared");
        let qs = &queries[range.clone()];
        let mut x: Vec<f64> = init[range.clone()].to_vec();
        let mut failed: Vec<Option<String>> = vec![None; x.len()];
        for (k, v) in x.iter().enumerate() {
            if !v.is_finite() {
                failed[k] = Some(format!("non-finite initial value at {}", qs[k].index));
            }
        }
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let ctx = model.condition(&mut tape, &bound, qs)?;
        let mark = tape.mark();
        let grad = |tape: &mut Tape, x: &[f64]| -> Result<Vec<f64>> {
            tape.rewind(mark);
            let safe: Vec<f64> = x.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect();
            let col = tape.column(&safe);
            let s = score(model, tape, &bound, &ctx, col)?;
            Ok(tape.value(s).iter().copied().collect())
        };
        for &alpha in &alphas {
            let amp = (2.0 * alpha).sqrt();
            for _ in 0..cfg.steps {
                let g = grad(&mut tape, &x)?;
                for k in 0..x.len() {
                    let xi: f64 = rngs[k].sample(StandardNormal);
                    if failed[k].is_some() {
                        continue;
                    }
                    let next = x[k] - alpha * g[k] + amp * xi;
                    if next.is_finite() {
                        x[k] = next;
                    } else {
                        failed[k] = Some(format!("chain diverged at {}", qs[k].index));
                    }
                }
            }
        }
        if cfg.final_denoise {
            let g = grad(&mut tape, &x)?;
            for k in 0..x.len() {
                let next = x[k] - sigma_min2 * g[k];
                if failed[k].is_none() && next.is_finite() {
                    x[k] = next;
                }
            }
        }
        let failures = failed
            .into_iter()
            .enumerate()
            .filter_map(|(k, f)| f.map(|m| (range.start + k, m)))
            .collect::<Vec<_>>();
        Ok((x, failures))
    })?;
    let mut out = SampleOutput::default();
    for (v, f) in chunks {
        out.values.extend(v);
        out.failures.extend(f);
    }
    Ok(out)
}

/// Grid point with the lowest energy for one query; ties go to the smaller value.
pub fn grid_min<E: EnergyFunction>(model: &E, query: &Query, cfg: &GridConfig) -> Result<f64> {
    Ok(grid_min_batch(model, std::slice::from_ref(query), cfg, 1)?[0])
}

/// [`grid_min`] for many queries; conditioning is computed once per query.
pub fn grid_min_batch<E: EnergyFunction>(model: &E, queries: &[Query], cfg: &GridConfig, workers: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    let grid = cfg.values();
    let g = grid.len();
    let chunk = (8192 / g).max(1);
    let parts = map_chunks(queries.len(), chunk, workers, |range| {
        let qs = &queries[range];
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let ctx = model.condition(&mut tape, &bound, qs)?;
        let rows: Vec<usize> = (0..qs.len()).flat_map(|q| std::iter::repeat_n(q, g)).collect();
        let ctx = model.select(&mut tape, &ctx, &rows)?;
        let xs: Vec<f64> = (0..qs.len()).flat_map(|_| grid.iter().copied()).collect();
        let col = tape.column(&xs);
        let e = model.energy(&mut tape, &bound, &ctx, crate::autodiff::Dual::constant(col))?;
        let e = tape.value(e.value);
        Ok((0..qs.len())
            .map(|q| {
                let mut best = 0;
                for k in 1..g {
                    if e[[q * g + k, 0]] < e[[q * g + best, 0]] {
                        best = k;
                    }
                }
                grid[best]
            })
            .collect::<Vec<f64>>())
    })?;
    Ok(parts.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::stubs::{Constant, Quadratic};
    use crate::energy::{energies, random_model, Variant};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn queries(n: usize) -> Vec<Query> {
        (0..n).map(|k| Query::new([k])).collect()
    }

    #[test]
    fn degenerate_and_unit_steps() {
        assert_eq!(langevin_update(0.3, 5.0, 0.0, 2.7), 0.3);
        assert_eq!(langevin_update(0.3, 0.0, 0.5, 1.0), 1.3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(langevin_step(&Quadratic::new(0.0, 1.0), &Query::new([0]), 0.7, 0.0, &mut rng).unwrap(), 0.7);
        assert!(langevin_step(&Constant(0.0), &Query::new([0]), 0.7, -1.0, &mut rng).is_err());
    }

    #[test]
    fn noiseless_quadratic_contracts_geometrically() {
        let (c, alpha) = (0.4, 0.3);
        let mut x: f64 = 2.0;
        for n in 1..=30 {
            x = langevin_update(x, x - c, alpha, 0.0);
            let expected = (1.0 - alpha).powi(n) * (2.0 - c);
            assert!((x - c - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_steps_return_init() {
        let cfg = LangevinConfig::new(NoiseSchedule::geometric(1.0, 0.01, 5).unwrap(), 1e-4, 0);
        let init = vec![0.1, 0.2, 0.3];
        let out = anneal(&Quadratic::new(0.0, 1.0), &queries(3), &init, &cfg, 1).unwrap();
        assert_eq!(out.values, init);
        assert!(anneal(&Constant(0.0), &[], &[], &cfg, 1).unwrap().values.is_empty());
    }

    #[test]
    fn step_size_ratio() {
        let cfg = LangevinConfig::new(NoiseSchedule::geometric(0.2, 0.01, 10).unwrap(), 2e-5, 1);
        let a = cfg.step_sizes();
        assert!((a[0] / a[9] - 400.0).abs() < 1e-9);
        assert_eq!(a[9], 2e-5);
    }

    #[test]
    fn quadratic_energy_samples_standard_normal() {
        let cfg = LangevinConfig::new(NoiseSchedule::geometric(1.0, 0.01, 10).unwrap(), 2e-5, 100);
        let n = 2000;
        let out = anneal(&Quadratic::new(0.0, 1.0), &queries(n), &vec![0.0; n], &cfg, 1).unwrap();
        let mean = out.values.iter().sum::<f64>() / n as f64;
        let var = out.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((0.8..=1.2).contains(&var), "var {var}");
    }

    #[test]
    fn zero_score_is_a_random_walk() {
        let cfg = LangevinConfig::new(NoiseSchedule::geometric(0.2, 0.01, 4).unwrap(), 1e-5, 20);
        let n = 10_000;
        let out = anneal(&Constant(0.0), &queries(n), &vec![0.0; n], &cfg, 2).unwrap();
        let expected: f64 = cfg.step_sizes().iter().map(|a| 2.0 * a * cfg.steps as f64).sum();
        let var = out.values.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((var - expected).abs() / expected < 0.1, "{var} vs {expected}");
    }

    #[test]
    fn chains_follow_their_index() {
        let mut cfg = LangevinConfig::new(NoiseSchedule::geometric(0.5, 0.05, 3).unwrap(), 1e-3, 5);
        cfg.seed = 3;
        let qs = queries(6);
        let init = vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
        let m = Quadratic::new(0.2, 1.0);
        let a = anneal(&m, &qs, &init, &cfg, 1).unwrap().values;
        let perm = [3, 0, 5, 1, 4, 2];
        let pq: Vec<Query> = perm.iter().map(|&p| qs[p].clone()).collect();
        let pi: Vec<f64> = perm.iter().map(|&p| init[p]).collect();
        let b = anneal(&m, &pq, &pi, &cfg, 3).unwrap().values;
        for (k, &p) in perm.iter().enumerate() {
            assert_eq!(b[k], a[p]);
        }
    }

    #[test]
    fn non_finite_chain_is_frozen_and_reported() {
        let cfg = LangevinConfig::new(NoiseSchedule::single(0.1).unwrap(), 1e-3, 3);
        let out = anneal(&Quadratic::new(0.0, 1.0), &queries(2), &[f64::NAN, 0.5], &cfg, 1).unwrap();
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].0, 0);
        assert!(out.values[1].is_finite());
    }

    #[test]
    fn grid_examples() {
        let g5 = GridConfig::new(0.0, 1.0, 5).unwrap();
        assert_eq!(grid_min(&Quadratic::new(0.5, 2.0), &Query::new([0]), &g5).unwrap(), 0.5);
        assert_eq!(grid_min(&Constant(1.0), &Query::new([0]), &g5).unwrap(), 0.0);
        assert!(GridConfig::new(1.0, 1.0, 5).is_err());
        assert!(GridConfig::new(0.0, 1.0, 1).is_err());
        assert_eq!(GridConfig::default().values()[255], 1.0);
    }

    #[test]
    fn grid_matches_brute_force_on_random_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = GridConfig::new(-1.0, 2.0, 37).unwrap();
        for _ in 0..5 {
            let m = random_model(Variant::Tabular, vec![4, 3], 2, 6, &mut rng).unwrap();
            let qs: Vec<Query> = (0..12).map(|k| Query::new([k % 4, k % 3])).collect();
            let got = grid_min_batch(&m, &qs, &cfg, 2).unwrap();
            for (q, v) in qs.iter().zip(&got) {
                let grid = cfg.values();
                let e = energies(&m, &vec![q.clone(); grid.len()], &grid).unwrap();
                let mut best = 0;
                for k in 1..grid.len() {
                    if e[k] < e[best] {
                        best = k;
                    }
                }
                assert_eq!(*v, grid[best]);
            }
        }
    }

    proptest! {
        #[test]
        fn grid_output_is_a_grid_point(c in -2.0f64..3.0, lo in -1.0f64..0.5, width in 0.1f64..2.0, g in 2usize..50) {
            let cfg = GridConfig::new(lo, lo + width, g).unwrap();
            let v = grid_min(&Quadratic::new(c, 1.0), &Query::new([0]), &cfg).unwrap();
            prop_assert!(cfg.values().contains(&v));
            prop_assert!(v >= cfg.lo && v <= cfg.hi);
        }
    }
}
