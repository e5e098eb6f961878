//! Multi-noise denoising score matching and the training loop.
//!
//! For one noise level the loss is `½·mean((x̃ − x)/σ² − ∂E/∂x̃)²` with
//! `x̃ = x + σξ`, so that `-∂E/∂x` fits the log-density gradient; levels are combined as `(1/L)·Σ σ_l²·loss_l`. An optional
//! smoothness term averages the energy at jittered coordinates (implicit
//! models only).

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::energy::{score, EnergyFunction, EnergyModel, Query, TensorKind};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::rng;
use crate::tensor::{NoiseSchedule, SparseTensor};

/// How noise levels are visited inside a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelMode {
    /// Every level on every entry.
    #[default]
    AllLevels,
    /// One uniformly drawn level per entry.
    OnePerSample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothConfig {
    pub weight: f64,
    /// Jitter std in normalized coordinates; `None` means `1/max(I_d)`.
    pub sigma: Option<f64>,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        Self { weight: 0.1, sigma: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine decay of the learning rate to this value over the epochs.
    pub lr_min: Option<f64>,
    pub schedule: NoiseSchedule,
    pub level_mode: LevelMode,
    pub seed: u64,
    pub workers: usize,
    pub smooth: Option<SmoothConfig>,
    /// Training aborts when a batch loss exceeds this or is not finite.
    pub max_loss: f64,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, lr: f64, schedule: NoiseSchedule) -> Self {
        Self {
            epochs,
            batch_size,
            lr,
            lr_min: None,
            schedule,
            level_mode: LevelMode::AllLevels,
            seed: 0,
            workers: 1,
            smooth: None,
            max_loss: 1e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.lr_min.is_some_and(|m| !(m >= 0.0 && m <= self.lr)) {
            return Err(Error::Config("lr_min must lie in [0, lr]".into()));
        }
        if let Some(s) = &self.smooth {
            if s.sigma.is_some_and(|v| !(v > 0.0)) || !(s.weight >= 0.0) {
                return Err(Error::Config("smooth term needs sigma > 0 and weight >= 0".into()));
            }
        }
        Ok(())
    }
}

fn normal_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Per-level loss with the standard-normal draws `xi` supplied by the caller.
pub fn dsm_loss_level_with_noise<E: EnergyFunction>(
    model: &E,
    tape: &mut Tape,
    bound: &E::Bound,
    ctx: &E::Context,
    x: &[f64],
    sigma: f64,
    xi: &[f64],
) -> Result<Var> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    if x.is_empty() || x.len() != xi.len() {
        return Err(Error::Argument("batch and noise must be non-empty and equally long".into()));
    }
    let noisy: Vec<f64> = x.iter().zip(xi).map(|(x, e)| x + sigma * e).collect();
    // (x̃ - x)/σ² computed as ξ/σ.
    let target: Vec<f64> = xi.iter().map(|e| e / sigma).collect();
    let xt = tape.column(&noisy);
    let s = score(model, tape, bound, ctx, xt)?;
    let target = tape.column(&target);
    let r = tape.sub(s, target)?;
    let sq = tape.mul(r, r)?;
    let m = tape.mean(sq)?;
    tape.scale(m, 0.5)
}

/// `½·mean((x̃ − x)/σ² − ∂E/∂x̃)²` with fresh noise from `rng`.
pub fn dsm_loss_level<E: EnergyFunction, R: Rng>(
    model: &E,
    tape: &mut Tape,
    bound: &E::Bound,
    ctx: &E::Context,
    x: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<Var> {
    let xi = normal_vec(rng, x.len());
    dsm_loss_level_with_noise(model, tape, bound, ctx, x, sigma, &xi)
}

/// `(1/L)·Σ σ_l²·loss_l` with one noise vector per level supplied by the caller.
pub fn dsm_loss_total_with_noise<E: EnergyFunction>(
    model: &E,
    tape: &mut Tape,
    bound: &E::Bound,
    ctx: &E::Context,
    x: &[f64],
    schedule: &NoiseSchedule,
    noise: &[Vec<f64>],
) -> Result<Var> {
    if noise.len() != schedule.len() {
        return Err(Error::Argument(format!("{} noise vectors for {} levels", noise.len(), schedule.len())));
    }
    let l = schedule.len() as f64;
    let mut total: Option<Var> = None;
    for (&sigma, xi) in schedule.sigmas().iter().zip(noise) {
        let level = dsm_loss_level_with_noise(model, tape, bound, ctx, x, sigma, xi)?;
        let weighted = tape.scale(level, sigma * sigma / l)?;
        total = Some(match total {
            Some(t) => tape.add(t, weighted)?,
            None => weighted,
        });
    }
    Ok(total.expect("schedule is non-empty"))
}

/// One-per-sample estimator: entry `k` is perturbed at level `levels[k]` and
/// weighted by that level's `σ²`.
pub fn dsm_loss_sampled_with_noise<E: EnergyFunction>(
    model: &E,
    tape: &mut Tape,
    bound: &E::Bound,
    ctx: &E::Context,
    x: &[f64],
    schedule: &NoiseSchedule,
    levels: &[usize],
    xi: &[f64],
) -> Result<Var> {
    if x.is_empty() || x.len() != xi.len() || x.len() != levels.len() {
        return Err(Error::Argument("batch, levels and noise must be non-empty and equally long".into()));
    }
    let sig = schedule.sigmas();
    let mut noisy = Vec::with_capacity(x.len());
    let mut target = Vec::with_capacity(x.len());
    let mut weight = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let s = *sig.get(levels[k]).ok_or_else(|| Error::Argument(format!("level {} out of range", levels[k])))?;
        noisy.push(x[k] + s * xi[k]);
        target.push(xi[k] / s);
        weight.push(0.5 * s * s);
    }
    let xt = tape.column(&noisy);
    let s = score(model, tape, bound, ctx, xt)?;
    let target = tape.column(&target);
    let r = tape.sub(s, target)?;
    let sq = tape.mul(r, r)?;
    let w = tape.column(&weight);
    let wsq = tape.mul(sq, w)?;
    tape.mean(wsq)
}

/// Combined multi-level loss in the requested mode.
#[allow(clippy::too_many_arguments)]
pub fn dsm_loss_total<E: EnergyFunction, R: Rng>(
    model: &E,
    tape: &mut Tape,
    bound: &E::Bound,
    ctx: &E::Context,
    x: &[f64],
    schedule: &NoiseSchedule,
    mode: LevelMode,
    rng: &mut R,
) -> Result<Var> {
    match mode {
        LevelMode::AllLevels => {
            let noise: Vec<Vec<f64>> = (0..schedule.len()).map(|_| normal_vec(rng, x.len())).collect();
            dsm_loss_total_with_noise(model, tape, bound, ctx, x, schedule, &noise)
        }
        LevelMode::OnePerSample => {
            let levels: Vec<usize> = (0..x.len()).map(|_| rng.random_range(0..schedule.len())).collect();
            let xi = normal_vec(rng, x.len());
            dsm_loss_sampled_with_noise(model, tape, bound, ctx, x, schedule, &levels, &xi)
        }
    }
}

/// Mean energy of `x` at coordinates jittered by `N(0, σ_S²)` noise.
pub fn smooth_loss<E: EnergyFunction, R: Rng>(
    model: &E,
    tape: &mut Tape,
    bound: &E::Bound,
    queries: &[Query],
    x: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<Var> {
    if !model.supports_jitter() {
        return Err(Error::Config("smooth regularizer needs the implicit variant".into()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Parameter(format!("smooth sigma must be non-negative, got {sigma}")));
    }
    if queries.is_empty() || queries.len() != x.len() {
        return Err(Error::Argument("queries and values must be non-empty and equally long".into()));
    }
    let jittered: Vec<Query> = queries
        .iter()
        .map(|q| {
            let d = q.index.order();
            let jitter = normal_vec(rng, d).into_iter().map(|e| sigma * e).collect();
            Query { jitter: Some(jitter), ..q.clone() }
        })
        .collect();
    let ctx = model.condition(tape, bound, &jittered)?;
    let xc = tape.column(x);
    let e = model.energy(tape, bound, &ctx, crate::autodiff::Dual::constant(xc))?;
    tape.mean(e.value)
}

/// Queries for the entries at `positions`.
pub fn queries_of(data: &SparseTensor, positions: &[usize]) -> Vec<Query> {
    positions
        .iter()
        .map(|&p| {
            let e = &data.entries()[p];
            Query { index: e.index.clone(), time: e.time, jitter: None }
        })
        .collect()
}

struct ChunkResult {
    loss: f64,
    grads: Vec<Array2<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn chunk_loss(
    model: &EnergyModel,
    data: &SparseTensor,
    smooth_values: Option<&[f64]>,
    positions: &[usize],
    cfg: &TrainConfig,
    smooth_sigma: f64,
    weight: f64,
    rng_parts: [u64; 3],
) -> Result<ChunkResult> {
    let mut rng = rng::stream(cfg.seed, "dsm-batch", &rng_parts);
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let queries = queries_of(data, positions);
    let x: Vec<f64> = positions.iter().map(|&p| data.entries()[p].value).collect();
    let ctx = model.condition(&mut tape, &bound, &queries)?;
    let mut loss = dsm_loss_total(model, &mut tape, &bound, &ctx, &x, &cfg.schedule, cfg.level_mode, &mut rng)?;
    if let Some(s) = &cfg.smooth {
        if s.weight > 0.0 {
            let sv: Vec<f64> = match smooth_values {
                Some(v) => positions.iter().map(|&p| v[p]).collect(),
                None => x.clone(),
            };
            let sl = smooth_loss(model, &mut tape, &bound, &queries, &sv, smooth_sigma, &mut rng)?;
            let sl = tape.scale(sl, s.weight)?;
            loss = tape.add(loss, sl)?;
        }
    }
    let loss = tape.scale(loss, weight)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Training(format!("non-finite loss in batch {rng_parts:?}")));
    }
    let g = tape.gradients(loss)?;
    let grads = bound.vars.iter().map(|&v| g.get_or_zeros(v, tape.shape(v))).collect();
    Ok(ChunkResult { loss: value, grads })
}

/// Fits `model` to `data` with Adam. Returns the per-epoch mean loss.
///
/// `smooth_values`, when given, supplies the values used by the smoothness
/// term (aligned with `data.entries()`); by default the observed values are used.
/// On divergence the model is left as it was after the last good step.
pub fn train(
    model: &mut EnergyModel,
    data: &SparseTensor,
    cfg: &TrainConfig,
    smooth_values: Option<&[f64]>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    if data.is_empty() {
        return Err(Error::Training("no training data".into()));
    }
    if data.dims() != model.dims() {
        return Err(Error::Training(format!("data dims {:?} do not match model dims {:?}", data.dims(), model.dims())));
    }
    if let Some(v) = smooth_values {
        if v.len() != data.len() {
            return Err(Error::Argument("smooth values must align with the data entries".into()));
        }
    }
    let smooth_sigma = cfg
        .smooth
        .as_ref()
        .map(|s| s.sigma.unwrap_or_else(|| 1.0 / *model.dims().iter().max().expect("dims") as f64))
        .unwrap_or(0.0);

    let kinds: Vec<TensorKind> = model.named_tensors().iter().map(|(_, k, _)| *k).collect();
    let shapes: Vec<(usize, usize)> = model.named_tensors().iter().map(|(_, _, t)| t.dim()).collect();
    let table_modes: Vec<Option<usize>> = {
        let mut d = 0;
        kinds
            .iter()
            .map(|k| {
                (*k == TensorKind::FactorRows).then(|| {
                    d += 1;
                    d - 1
                })
            })
            .collect()
    };
    let mut adam = Adam::new(cfg.lr, &shapes);
    let workers = cfg.workers.max(1);
    let pool = if workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::Training(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if let Some(lo) = cfg.lr_min {
            let frac = if cfg.epochs > 1 { epoch as f64 / (cfg.epochs - 1) as f64 } else { 0.0 };
            adam.lr = lo + 0.5 * (cfg.lr - lo) * (1.0 + (std::f64::consts::PI * frac).cos());
        }
        let mut shuffle = rng::stream(cfg.seed, "dsm-shuffle", &[epoch as u64]);
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let chunk_len = batch.len().div_ceil(workers);
            let chunks: Vec<&[usize]> = batch.chunks(chunk_len).collect();
            let run = |(c, pos): (usize, &&[usize])| {
                let weight = pos.len() as f64 / batch.len() as f64;
                chunk_loss(
                    model,
                    data,
                    smooth_values,
                    pos,
                    cfg,
                    smooth_sigma,
                    weight,
                    [epoch as u64, b as u64, c as u64],
                )
            };
            let results: Vec<Result<ChunkResult>> = match &pool {
                Some(p) => p.install(|| chunks.par_iter().enumerate().map(run).collect()),
                None => chunks.iter().enumerate().map(run).collect(),
            };
            let mut loss = 0.0;
            let mut grads: Option<Vec<Array2<f64>>> = None;
            for r in results {
                let r = r?;
                loss += r.loss;
                grads = Some(match grads {
                    None => r.grads,
                    Some(mut acc) => {
                        for (a, g) in acc.iter_mut().zip(&r.grads) {
                            *a += g;
                        }
                        acc
                    }
                });
            }
            if !loss.is_finite() || loss > cfg.max_loss {
                return Err(Error::Training(format!("loss diverged to {loss} at epoch {epoch}, batch {b}")));
            }
            let rows: Vec<Option<Vec<usize>>> = kinds
                .iter()
                .zip(&table_modes)
                .map(|(k, mode)| match (k, mode) {
                    (TensorKind::Frozen, _) => Some(Vec::new()),
                    (TensorKind::FactorRows, Some(d)) => {
                        let mut r: Vec<usize> = batch.iter().map(|&p| data.entries()[p].index.coords()[*d]).collect();
                        r.sort_unstable();
                        r.dedup();
                        Some(r)
                    }
                    _ => None,
                })
                .collect();
            let grads = grads.expect("batch is non-empty");
            let mut params = model.tensors_mut();
            adam.step(&mut params, &grads, &rows)?;
            epoch_loss += loss * batch.len() as f64;
        }
        trace.push(epoch_loss / n as f64);
    }
    Ok(trace)
}

/// Writes a loss trace as `epoch,loss` CSV.
pub fn write_loss_trace(path: impl AsRef<Path>, trace: &[f64]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "epoch,loss")?;
    for (e, l) in trace.iter().enumerate() {
        writeln!(f, "{e},{l:?}")?;
    }
    Ok(())
}
