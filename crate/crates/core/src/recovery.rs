//! Completion of missing entries and block-coordinate-descent denoising with
//! a sparse noise component.

use crate::dsm::{train, TrainConfig};
use crate::energy::{EnergyFunction, EnergyModel, Query};
use crate::error::{Error, Result};
use crate::samplers::{anneal, grid_min_batch, GridConfig, LangevinConfig, SampleOutput};
use crate::tensor::{fold, DenseTensor, MultiIndex, SparseTensor};

/// `sgn(v)·max(|v| − τ, 0)`.
pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    debug_assert!(tau >= 0.0);
    let m = v.abs() - tau;
    if m > 0.0 {
        m.copysign(v)
    } else {
        0.0
    }
}

/// Splits `xhat` into `(x, s)` with `x` next to `target` and `x + s == xhat`
/// exactly in floating point.
///
/// Exactness is guaranteed when `|target| ≤ |xhat|`, and more generally while
/// `target` stays below the power of two above `|xhat|`; `x` then moves by at
/// most half an ulp of `xhat`. When both parts are much larger than `xhat`
/// no representable pair sums to it, and the sum is off by at most an ulp of
/// the larger part.
pub fn split_exact(xhat: f64, target: f64) -> (f64, f64) {
    let s = xhat - target;
    if target + s == xhat {
        return (target, s);
    }
    if xhat == 0.0 {
        return (target, -target);
    }
    // With s on the ulp grid of xhat, xhat − s is a multiple of that ulp; it
    // is representable (and the subtraction exact) below the next binade.
    let a = xhat.abs();
    let u = a.next_up() - a;
    let sg = (s / u).round() * u;
    let x = xhat - sg;
    if x + sg == xhat {
        return (x, sg);
    }
    (target, s)
}

/// How missing values are filled.
#[derive(Clone, Debug, PartialEq)]
pub enum Sampler {
    /// Annealed Langevin dynamics (continuous data).
    Langevin(LangevinConfig),
    /// Grid search over a fixed value grid (discrete data).
    Grid(GridConfig),
}

/// Starting points for the samplers: the observed value at the same index
/// (and time) when there is one, otherwise the median of all observed values.
pub fn initial_values(queries: &[Query], observed: &SparseTensor) -> Vec<f64> {
    let mut seen = std::collections::HashMap::new();
    for e in observed.entries() {
        seen.entry((e.index.clone(), e.time.map(f64::to_bits))).or_insert(e.value);
    }
    let mut values = observed.values();
    values.sort_by(f64::total_cmp);
    let median = match values.len() {
        0 => 0.0,
        n if n % 2 == 1 => values[n / 2],
        n => 0.5 * (values[n / 2 - 1] + values[n / 2]),
    };
    queries
        .iter()
        .map(|q| *seen.get(&(q.index.clone(), q.time.map(f64::to_bits))).unwrap_or(&median))
        .collect()
}

/// Per-query estimates from the chosen sampler. Failed chains are listed in
/// the output instead of aborting the whole call.
pub fn complete<E: EnergyFunction>(
    model: &E,
    queries: &[Query],
    init: &[f64],
    sampler: &Sampler,
    workers: usize,
) -> Result<SampleOutput> {
    match sampler {
        Sampler::Langevin(cfg) => anneal(model, queries, init, cfg, workers),
        Sampler::Grid(cfg) => Ok(SampleOutput { values: grid_min_batch(model, queries, cfg, workers)?, failures: Vec::new() }),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcdConfig {
    /// Outer iterations `T`.
    pub iterations: usize,
    /// Sparsity weight `λ_S`; shrinkage uses `λ_S/2`.
    pub lambda_s: f64,
    /// Fit on the observed values before the first iteration.
    pub pretrain: Option<TrainConfig>,
    /// Retraining run once per outer iteration.
    pub retrain: TrainConfig,
    pub sampler: Sampler,
    pub workers: usize,
}

/// Entry-aligned state after an outer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct BcdState {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub failures: Vec<(usize, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcdOutput {
    pub clean: DenseTensor,
    pub sparse: DenseTensor,
    pub state: BcdState,
    pub losses: Vec<f64>,
}

/// Alternates posterior sampling, soft-thresholding of the residual and
/// retraining on the current clean estimate. `observe` sees the state after
/// every outer iteration.
pub fn denoise_bcd<F: FnMut(&BcdState)>(
    observed: &SparseTensor,
    model: &mut EnergyModel,
    cfg: &BcdConfig,
    mut observe: F,
) -> Result<BcdOutput> {
    if cfg.iterations == 0 {
        return Err(Error::Config("denoising needs at least one iteration".into()));
    }
    if !(cfg.lambda_s >= 0.0) {
        return Err(Error::Config(format!("lambda_s must be non-negative, got {}", cfg.lambda_s)));
    }
    let xhat = observed.values();
    let queries = crate::dsm::queries_of(observed, &(0..observed.len()).collect::<Vec<_>>());
    let mut losses = Vec::new();
    if let Some(pre) = &cfg.pretrain {
        losses.extend(train(model, observed, pre, None)?);
    }
    let tau = cfg.lambda_s / 2.0;
    let mut state = BcdState { iteration: 0, x: xhat.clone(), s: vec![0.0; xhat.len()], failures: Vec::new() };
    for t in 1..=cfg.iterations {
        let sampled = complete(model, &queries, &state.x, &cfg.sampler, cfg.workers)?;
        let mut x = Vec::with_capacity(xhat.len());
        let mut s = Vec::with_capacity(xhat.len());
        for (&obs, &post) in xhat.iter().zip(&sampled.values) {
            let shrunk = soft_threshold(obs - post, tau);
            // With no shrinkage the clean value is the posterior draw itself.
            let target = if tau == 0.0 { post } else { obs - shrunk };
            let (xk, sk) = split_exact(obs, target);
            x.push(xk);
            s.push(sk);
        }
        let current = observed.with_values(&x)?;
        losses.extend(train(model, &current, &cfg.retrain, Some(&x))?);
        state = BcdState { iteration: t, x, s, failures: sampled.failures };
        observe(&state);
    }
    let dims = observed.dims().to_vec();
    let pairs = |v: &[f64]| -> Vec<(MultiIndex, f64)> {
        observed.entries().iter().zip(v).map(|(e, &v)| (e.index.clone(), v)).collect()
    };
    let clean = fold(&pairs(&state.x), &dims)?;
    let sparse = fold(&pairs(&state.s), &dims)?;
    Ok(BcdOutput { clean, sparse, state, losses })
}
