//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers to run a subset:
//!
//! cargo test --release --test acceptance -- 2 7

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use score_tensor::autodiff::{Dual, Tape};
use score_tensor::cli::{grid_density, load_dataset, resolve_config, run_config, CommonArgs, ExperimentConfig, Task};
use score_tensor::datagen::{cp_value, gen_entry_samples, gen_factors, sim_density, FactorLaw, SimLaw, SimSpec};
use score_tensor::dsm::{train, TrainConfig};
use score_tensor::energy::stubs::Quadratic;
use score_tensor::energy::{scores, EnergyModel, ModelSpec, Query, Variant};
use score_tensor::metrics::{local_maxima, mae, nrmse, psnr, rmse, ssim_2d, tv_distance};
use score_tensor::nn::{init_params, Activation, Mlp, MlpShape};
use score_tensor::recovery::{denoise_bcd, soft_threshold, BcdConfig};
use score_tensor::samplers::{anneal, GridConfig, LangevinConfig};
use score_tensor::tensor::{DenseTensor, Entry, MultiIndex, NoiseSchedule, SparseTensor};

// Criterion 1
const AUTODIFF_MODELS: usize = 200;
const AUTODIFF_STEP: f64 = 1e-5;
const AUTODIFF_REL_TOL: f64 = 1e-4;
/// Denominator floor of the relative error, so near-zero gradients are
/// compared on an absolute scale of `AUTODIFF_REL_TOL * AUTODIFF_FLOOR`.
const AUTODIFF_FLOOR: f64 = 1e-3;
const AUTODIFF_BUDGET: Duration = Duration::from_secs(30);
// Criterion 2
const DSM_ROOT_TOL: f64 = 0.02;
const DSM_SLOPE: f64 = -80.0;
const DSM_SLOPE_REL_TOL: f64 = 0.15;
const DSM_BUDGET: Duration = Duration::from_secs(120);
// Criterion 3
const LANGEVIN_CHAINS: usize = 2000;
const LANGEVIN_MEAN_TOL: f64 = 0.1;
const LANGEVIN_VAR_RANGE: (f64, f64) = (0.8, 1.2);
const LANGEVIN_BUDGET: Duration = Duration::from_secs(60);
// Criterion 4
const SOFT_DRAWS: usize = 10_000;
const SOFT_GRID_STEP: f64 = 1e-4;
// Criterion 5
const DENSITY_TV_MAX: f64 = 0.15;
const DENSITY_BUDGET: Duration = Duration::from_secs(600);
// Criterion 6
const CONTINUOUS_RMSE_OF_SD: f64 = 0.15;
const CONTINUOUS_BUDGET: Duration = Duration::from_secs(900);
// Criterion 7
const BCD_MIN_REDUCTION: f64 = 0.5;
// Criterion 8
const METRIC_EXACT_TOL: f64 = 1e-12;
const METRIC_PAIRS: usize = 1000;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> score_tensor::Result<Outcome>;

fn within(budget: Duration, took: Duration) -> bool {
    took < budget
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let checks: [(&str, Check, Option<Duration>); 10] = [
        ("autodiff matches finite differences", autodiff_fidelity, Some(AUTODIFF_BUDGET)),
        ("DSM recovers the Gaussian score", dsm_oracle, Some(DSM_BUDGET)),
        ("Langevin samples the quadratic energy", langevin_quadratic, Some(LANGEVIN_BUDGET)),
        ("soft-threshold is the exact minimizer", soft_threshold_exact, None),
        ("MoG simulation density fit", simulation_density, Some(DENSITY_BUDGET)),
        ("continuous tensor completion", continuous_completion, Some(CONTINUOUS_BUDGET)),
        ("BCD removes impulses, exact split", bcd_denoising, None),
        ("metric unit suite", metric_suite, None),
        ("presets are bitwise reproducible", reproducibility, None),
        ("alog preset on a user COO file", alog_on_coo, None),
    ];
    let mut failed = 0;
    for (k, (name, check, budget)) in checks.iter().enumerate() {
        let n = k + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => {
                let on_time = budget.is_none_or(|b| within(b, took));
                let late = if on_time { String::new() } else { format!(", over the {:?} budget", budget.unwrap()) };
                (o.pass && on_time, format!("{}{late}", o.detail))
            }
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("{} {n:>2} {name}: {detail} [{:.1}s]", if pass { "PASS" } else { "FAIL" }, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

/// Energy and score of a batch under a plain MLP whose first input column is
/// the seeded value.
fn mlp_energy_score(mlp: &Mlp, x: &[f64], ctx: &Array2<f64>) -> (f64, f64) {
    let mut tape = Tape::new();
    let params = mlp.bind(&mut tape, false);
    let (e, s) = mlp_outputs(&mut tape, mlp, &params, x, ctx);
    (tape.value(e).sum(), tape.value(s).sum())
}

fn mlp_outputs(tape: &mut Tape, mlp: &Mlp, params: &[score_tensor::autodiff::Var], x: &[f64], ctx: &Array2<f64>) -> (score_tensor::autodiff::Var, score_tensor::autodiff::Var) {
    let col = tape.column(x);
    let seeded = tape.seed(col).unwrap();
    let c = tape.constant(ctx.clone());
    let input = tape.dual_concat(&[seeded, Dual::constant(c)]).unwrap();
    let out = mlp.forward(tape, params, input).unwrap();
    let e = tape.sum(out.value).unwrap();
    let s = tape.sum(out.tangent.expect("seeded")).unwrap();
    (e, s)
}

fn autodiff_fidelity() -> score_tensor::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let rows = 4;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(AUTODIFF_FLOOR);
    for k in 0..AUTODIFF_MODELS {
        let width = if k % 2 == 0 { 8 } else { 32 };
        let shape = MlpShape::new(&[3, width, width, 1], Activation::Softplus, Activation::Identity);
        let mut mlp = init_params(&shape, rng.random())?;
        for t in mlp.tensors_mut() {
            t.mapv_inplace(|v| v + 0.2 * rng.sample::<f64, _>(StandardNormal));
        }
        let x: Vec<f64> = (0..rows).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ctx = Array2::from_shape_simple_fn((rows, 2), || rng.random_range(-1.0..1.0));

        let mut tape = Tape::new();
        let params = mlp.bind(&mut tape, true);
        let (e, s) = mlp_outputs(&mut tape, &mlp, &params, &x, &ctx);
        let grad_e = tape.reverse_grad(e, &params)?;
        let grad_s = tape.reverse_grad(s, &params)?;

        let mut flat = 0;
        for t in 0..mlp.tensor_count() {
            let len = mlp.tensors().nth(t).expect("tensor").len();
            for j in 0..len {
                let mut up = mlp.clone();
                let mut dn = mlp.clone();
                up.tensors_mut().nth(t).expect("tensor").as_slice_mut().expect("contiguous")[j] += AUTODIFF_STEP;
                dn.tensors_mut().nth(t).expect("tensor").as_slice_mut().expect("contiguous")[j] -= AUTODIFF_STEP;
                let (eu, su) = mlp_energy_score(&up, &x, &ctx);
                let (ed, sd) = mlp_energy_score(&dn, &x, &ctx);
                worst = worst.max(rel(grad_e[flat], (eu - ed) / (2.0 * AUTODIFF_STEP)));
                worst = worst.max(rel(grad_s[flat], (su - sd) / (2.0 * AUTODIFF_STEP)));
                flat += 1;
                checked += 2;
            }
        }
        // The score itself against a difference in the value.
        let (_, s0) = mlp_energy_score(&mlp, &x, &ctx);
        let shifted = |d: f64| x.iter().map(|v| v + d).collect::<Vec<_>>();
        let fd = (mlp_energy_score(&mlp, &shifted(AUTODIFF_STEP), &ctx).0 - mlp_energy_score(&mlp, &shifted(-AUTODIFF_STEP), &ctx).0)
            / (2.0 * AUTODIFF_STEP);
        worst = worst.max(rel(s0, fd));
        checked += 1;
    }
    Ok(Outcome {
        pass: worst < AUTODIFF_REL_TOL,
        detail: format!("max relative error {worst:.2e} over {checked} derivatives (tolerance {AUTODIFF_REL_TOL:e})"),
    })
}

fn dsm_oracle() -> score_tensor::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let entries = (0..4096).map(|_| Entry::new([0], 0.5 + 0.1 * rng.sample::<f64, _>(StandardNormal))).collect();
    let data = SparseTensor::with_repeats(vec![1], entries)?;
    let mut cfg = TrainConfig::new(100, 256, 1e-3, NoiseSchedule::single(0.05)?);
    cfg.seed = 1;
    let mut spec = ModelSpec::new(Variant::Tabular, vec![1], 2, 32);
    spec.seed = 2;
    let mut model = EnergyModel::new(spec)?;
    train(&mut model, &data, &cfg, None)?;
    // −∂E/∂x is the learned log-density gradient.
    let score = |x: f64| -> score_tensor::Result<f64> { Ok(-scores(&model, &[Query::new([0])], &[x])?[0]) };
    let (mut lo, mut hi) = (0.3, 0.7);
    let (slo, shi) = (score(lo)?, score(hi)?);
    if !(slo > 0.0 && shi < 0.0) {
        return Ok(Outcome { pass: false, detail: format!("score does not change sign on [0.3, 0.7]: {slo}, {shi}") });
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if score(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    let slope = (score(root + 0.05)? - score(root - 0.05)?) / 0.1;
    let root_ok = (root - 0.5).abs() <= DSM_ROOT_TOL;
    let slope_ok = (slope - DSM_SLOPE).abs() <= DSM_SLOPE_REL_TOL * DSM_SLOPE.abs();
    Ok(Outcome {
        pass: root_ok && slope_ok,
        detail: format!("zero crossing {root:.4} (0.5 ± {DSM_ROOT_TOL}), slope {slope:.2} ({DSM_SLOPE} ± {:.0}%)", DSM_SLOPE_REL_TOL * 100.0),
    })
}

fn langevin_quadratic() -> score_tensor::Result<Outcome> {
    let mut cfg = LangevinConfig::new(NoiseSchedule::geometric(1.0, 0.01, 10)?, 2e-5, 100);
    cfg.seed = 11;
    let n = LANGEVIN_CHAINS;
    let queries: Vec<Query> = (0..n).map(|k| Query::new([k])).collect();
    let out = anneal(&Quadratic::new(0.0, 1.0), &queries, &vec![0.0; n], &cfg, 1)?;
    let mean = out.values.iter().sum::<f64>() / n as f64;
    let var = out.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let pass = mean.abs() < LANGEVIN_MEAN_TOL && (LANGEVIN_VAR_RANGE.0..=LANGEVIN_VAR_RANGE.1).contains(&var) && out.failures.is_empty();
    Ok(Outcome { pass, detail: format!("mean {mean:+.4}, variance {var:.4} over {n} chains") })
}

fn soft_threshold_exact() -> score_tensor::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let points = (4.0 / SOFT_GRID_STEP).round() as usize;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_arg = 0.0f64;
    for _ in 0..SOFT_DRAWS {
        let r: f64 = rng.random_range(-2.0..2.0);
        let lambda: f64 = rng.random_range(0.0..2.0);
        // Elementwise sparse subproblem: (r − s)² + λ|s|.
        let obj = |s: f64| (r - s).powi(2) + lambda * s.abs();
        let s_star = soft_threshold(r, lambda / 2.0);
        let (mut best, mut best_s) = (f64::INFINITY, 0.0);
        for k in 0..=points {
            let s = -2.0 + k as f64 * SOFT_GRID_STEP;
            let v = obj(s);
            if v < best {
                best = v;
                best_s = s;
            }
        }
        worst_gap = worst_gap.max(obj(s_star) - best);
        worst_arg = worst_arg.max((s_star - best_s).abs());
    }
    // The closed form may never lose to the grid; its argmin sits within one grid step.
    let pass = worst_gap <= 1e-12 && worst_arg <= SOFT_GRID_STEP;
    Ok(Outcome { pass, detail: format!("worst objective gap {worst_gap:.2e}, worst argmin offset {worst_arg:.2e} over {SOFT_DRAWS} draws") })
}

fn simulation_density() -> score_tensor::Result<Outcome> {
    let n = 8;
    let law = SimLaw::Mog;
    let z = gen_factors(&[n, n], 5, &FactorLaw::Uniform, 1)?;
    let data = gen_entry_samples(&z, &SimSpec::standard(law, 2))?;
    let mut spec = ModelSpec::new(Variant::Tabular, vec![n, n], 5, 64);
    spec.seed = 3;
    let mut model = EnergyModel::new(spec)?;
    let mut cfg = TrainConfig::new(300, 128, 3e-3, NoiseSchedule::single(0.05)?);
    cfg.lr_min = Some(1e-5);
    train(&mut model, &data, &cfg, None)?;
    // Probe the entry whose parameter is closest to 2.5, where the components separate.
    let mut probe = None;
    for k in 0..n * n {
        let idx = MultiIndex::from([k / n, k % n]);
        let m = cp_value(&z, &idx)?;
        if probe.as_ref().is_none_or(|(_, best): &(MultiIndex, f64)| (m - 2.5).abs() < (best - 2.5).abs()) {
            probe = Some((idx, m));
        }
    }
    let (entry, m) = probe.expect("non-empty");
    let (lo, hi) = (-1.5, 2.0);
    let grid = GridConfig::new(lo, hi, 200)?;
    let learned: Vec<f64> = grid_density(&model, &Query::new(entry.clone()), &grid)?.into_iter().map(|p| p.1).collect();
    let truth: Vec<f64> = grid.values().into_iter().map(|x| sim_density(law, m, x)).collect();
    let tv = tv_distance(&learned, &truth, hi - lo)?;
    let modes = local_maxima(&learned);
    Ok(Outcome {
        pass: tv <= DENSITY_TV_MAX && modes == 2,
        detail: format!("entry {entry} (m = {m:.3}): total variation {tv:.4} (≤ {DENSITY_TV_MAX}), {modes} modes"),
    })
}

fn preset(name: &str, set: &[String], out: &Path, seed: u64) -> score_tensor::Result<ExperimentConfig> {
    resolve_config(&CommonArgs {
        preset: Some(name.to_string()),
        set: set.to_vec(),
        out: Some(out.to_path_buf()),
        seed: Some(seed),
        workers: Some(1),
        config: None,
    })
}

fn metric(rows: &[(String, f64)], name: &str) -> Option<f64> {
    rows.iter().find(|r| r.0 == name).map(|r| r.1)
}

fn continuous_completion() -> score_tensor::Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let cfg = preset("continuous", &[], dir.path(), 0)?;
    let data = load_dataset(&cfg, Task::Complete)?;
    let truth = data.test.as_ref().expect("burst split").values();
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let sd = (truth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / truth.len() as f64).sqrt();
    let summary = run_config(&cfg, Task::Complete)?;
    let r = metric(&summary.metrics, "rmse").unwrap_or(f64::NAN);
    let missing = truth.len() as f64 / (truth.len() + data.train.as_ref().map_or(0, |t| t.len())) as f64;
    Ok(Outcome {
        pass: r <= CONTINUOUS_RMSE_OF_SD * sd,
        detail: format!("test rmse {r:.4} = {:.3} × sd {sd:.3} (≤ {CONTINUOUS_RMSE_OF_SD}), missing rate {missing:.3}", r / sd),
    })
}

fn bcd_denoising() -> score_tensor::Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let cfg = preset("low-rank-denoise", &[], dir.path(), 0)?;
    let data = load_dataset(&cfg, Task::Denoise)?;
    let noisy = data.noisy.as_ref().expect("noisy");
    let clean = data.clean.as_ref().expect("clean");
    let observed = SparseTensor::from_dense(noisy);
    let xhat = observed.values();
    let rank = cfg.model.rank_list()[0];
    let mut model = EnergyModel::new(cfg.model_spec(noisy.dims(), rank, &observed)?)?;
    let epochs = cfg.train.epochs.unwrap_or(0);
    let bcd = BcdConfig {
        iterations: cfg.denoise.iterations,
        lambda_s: cfg.denoise.lambda_s,
        pretrain: Some(cfg.train_config(epochs, &model.spec)?),
        retrain: cfg.train_config(cfg.denoise.retrain_epochs.unwrap_or(epochs), &model.spec)?,
        sampler: cfg.sampler(&model.spec)?,
        workers: 1,
    };
    let mut split_violations = 0usize;
    let mut iterations = 0;
    let out = denoise_bcd(&observed, &mut model, &bcd, |state| {
        iterations += 1;
        split_violations += state.x.iter().zip(&state.s).zip(&xhat).filter(|((x, s), o)| (*x + *s).to_bits() != o.to_bits()).count();
    })?;
    let before = rmse(noisy.values(), clean.values())?;
    let after = rmse(out.clean.values(), clean.values())?;
    let reduction = 1.0 - after / before;
    Ok(Outcome {
        pass: reduction >= BCD_MIN_REDUCTION && split_violations == 0 && iterations == 5,
        detail: format!(
            "rmse {before:.4} -> {after:.4} ({:.1}% reduction, need {:.0}%), split violations {split_violations} over {iterations} iterations",
            100.0 * reduction,
            100.0 * BCD_MIN_REDUCTION
        ),
    })
}

fn metric_suite() -> score_tensor::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth: Vec<f64> = (0..400).map(|_| rng.random_range(0.0..1.0)).collect();
    // Offsets of ±0.1 give MSE 0.01 up to rounding.
    let pred: Vec<f64> = truth.iter().enumerate().map(|(k, t)| t + if k % 2 == 0 { 0.1 } else { -0.1 }).collect();
    let p = psnr(&pred, &truth, 1.0)?;
    let s = ssim_2d(&truth, &truth, 20, 20, 1.0)?;
    let nr = nrmse(&vec![0.0; truth.len()], &truth)?;
    let mut ordered = true;
    for _ in 0..METRIC_PAIRS {
        let len = rng.random_range(1..50);
        let a: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        ordered &= rmse(&a, &b)? >= mae(&a, &b)?;
    }
    let pass = (p - 20.0).abs() < 1e-9 && (s - 1.0).abs() < METRIC_EXACT_TOL && (nr - 1.0).abs() < METRIC_EXACT_TOL && ordered;
    Ok(Outcome { pass, detail: format!("psnr {p:.12}, ssim(a, a) {s}, nrmse(0, truth) {nr}, rmse ≥ mae on {METRIC_PAIRS} pairs: {ordered}") })
}

fn synthetic_coo(path: &Path, dims: &[usize], timed: bool, seed: u64) -> score_tensor::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = dims.iter().product();
    let mut entries = Vec::new();
    for lin in 0..total {
        if rng.random::<f64>() < 0.6 {
            let idx = MultiIndex::from_linear(lin, dims);
            let v = idx.coords().iter().map(|&c| (c as f64 * 0.7).sin()).sum::<f64>() + 0.1 * rng.sample::<f64, _>(StandardNormal);
            entries.push(if timed { Entry::timed(idx, v, rng.random_range(0.0..1.0)) } else { Entry::new(idx, v) });
        }
    }
    score_tensor::io::save_coo(&SparseTensor::new(dims.to_vec(), entries)?, path)
}

fn synthetic_image(path: &Path, dims: &[usize], seed: u64) -> score_tensor::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = dims.iter().product();
    let values = (0..total).map(|_| rng.random_range(0.2..0.8)).collect();
    score_tensor::io::save_dense(&DenseTensor::new(dims.to_vec(), values)?, path)
}

/// Every file under `dir` except the manifest, which records the output path.
fn artifacts(dir: &Path) -> score_tensor::Result<Vec<(PathBuf, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "manifest.toml") {
                out.push((p.strip_prefix(dir).expect("under dir").to_path_buf(), fs::read(&p)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn reproducibility() -> score_tensor::Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let coo = dir.path().join("data.coo");
    let timed = dir.path().join("timed.coo");
    let image = dir.path().join("image.dense");
    synthetic_coo(&coo, &[5, 4, 3], false, 1)?;
    synthetic_coo(&timed, &[5, 4], true, 2)?;
    synthetic_image(&image, &[6, 6, 3], 3)?;
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let coo_set = |p: &Path| s(&["train.epochs=1", &format!("data.path=\"{}\"", p.display()), "data.rate=0.8", "sampler.steps=3"]);
    let image_set = s(&["train.epochs=1", &format!("data.path=\"{}\"", image.display()), "data.rate=0.5", "sampler.points=16"]);
    let cases: Vec<(&str, Task, Vec<String>)> = vec![
        ("alog", Task::Complete, coo_set(&coo)),
        ("acc", Task::Complete, coo_set(&coo)),
        ("air", Task::Complete, coo_set(&timed)),
        ("click", Task::Complete, coo_set(&timed)),
        ("continuous", Task::Complete, s(&["train.epochs=1", "data.dims=[3, 3]", "data.times=20", "sampler.points=32"])),
        ("low-rank-denoise", Task::Denoise, s(&["train.epochs=1", "data.dims=[4, 4, 4]", "denoise.iterations=2", "denoise.retrain_epochs=1"])),
        ("msi-denoise", Task::Denoise, {
            let mut v = image_set.clone();
            v.retain(|x| !x.starts_with("data.rate"));
            v.extend(s(&["denoise.iterations=1", "denoise.retrain_epochs=1"]));
            v
        }),
        ("msi-inpaint", Task::Complete, image_set.clone()),
        ("rgb-inpaint", Task::Complete, image_set.clone()),
        ("video-inpaint", Task::Complete, image_set.clone()),
        ("sim-beta", Task::Plot, s(&["train.epochs=1", "data.dims=[3, 3]", "data.samples=10"])),
        ("sim-mog", Task::Plot, s(&["train.epochs=1", "data.dims=[3, 3]", "data.samples=10"])),
        ("sim-exponential", Task::Plot, s(&["train.epochs=1", "data.dims=[3, 3]", "data.samples=10"])),
    ];
    let mut differing = Vec::new();
    let mut files = 0;
    for (name, task, set) in &cases {
        let a = dir.path().join(format!("{name}-a"));
        let b = dir.path().join(format!("{name}-b"));
        run_config(&preset(name, set, &a, 17)?, *task)?;
        run_config(&preset(name, set, &b, 17)?, *task)?;
        let (fa, fb) = (artifacts(&a)?, artifacts(&b)?);
        let has_checkpoint = fa.iter().any(|(p, _)| p.ends_with("params.bin"));
        files += fa.len();
        if fa != fb || !has_checkpoint || !fa.iter().any(|(p, _)| p == Path::new("metrics.csv")) {
            differing.push(name.to_string());
        }
    }
    Ok(Outcome {
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("{} presets, {files} files identical across two runs", cases.len())
        } else {
            format!("differing or incomplete: {}", differing.join(", "))
        },
    })
}

fn alog_on_coo() -> score_tensor::Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let (train_path, test_path) = (dir.path().join("train.coo"), dir.path().join("test.coo"));
    synthetic_coo(&train_path, &[8, 6, 5], false, 4)?;
    synthetic_coo(&test_path, &[8, 6, 5], false, 5)?;
    let set = vec![
        "train.epochs=2".to_string(),
        format!("data.train=\"{}\"", train_path.display()),
        format!("data.test=\"{}\"", test_path.display()),
    ];
    let cfg = preset("alog", &set, &dir.path().join("run"), 0)?;
    let summary = run_config(&cfg, Task::Complete)?;
    let ranks = cfg.model.rank_list();
    let mut parts = Vec::new();
    let mut pass = !ranks.is_empty();
    for r in &ranks {
        let (rm, ma) = (metric(&summary.metrics, &format!("rmse_r{r}")), metric(&summary.metrics, &format!("mae_r{r}")));
        pass &= rm.is_some_and(f64::is_finite) && ma.is_some_and(f64::is_finite);
        parts.push(format!("R{r} rmse {:.3} mae {:.3}", rm.unwrap_or(f64::NAN), ma.unwrap_or(f64::NAN)));
    }
    pass &= summary.out.join("metrics.csv").exists();
    Ok(Outcome { pass, detail: parts.join(", ") })
}
