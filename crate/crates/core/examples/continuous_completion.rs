//! Completes bursts of missing timestamps in the synthetic 8 x 8 tensor of
//! length-200 time series (4 bursts of 5% per series) and reports the test
//! error of grid argmin and of annealed Langevin sampling.
//!
//! cargo run --release --example continuous_completion -- [epochs]

use score_tensor::datagen::{apply_missing, continuous_factors, gen_continuous, uniform_times, MissingMode};
use score_tensor::dsm::{queries_of, train, LevelMode, TrainConfig};
use score_tensor::energy::{EnergyModel, ModelSpec, Variant};
use score_tensor::metrics::{mae, rmse};
use score_tensor::recovery::{complete, initial_values, Sampler};
use score_tensor::samplers::{GridConfig, LangevinConfig};
use score_tensor::tensor::NoiseSchedule;

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (mean, (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt())
}

fn main() -> score_tensor::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);

    let z = continuous_factors([8, 8], 1)?;
    let data = gen_continuous(&z, &uniform_times(200))?;
    let split = apply_missing(&data, MissingMode::Burst { starts: 4, fraction: 0.05 }, 2)?;
    let truth = split.test.values();
    let (_, sd) = mean_sd(&truth);
    println!("train {} test {}, test sd {sd:.3}", split.train.len(), split.test.len());

    // The network sees standardized values; σ and grid bounds below are in those units.
    let (mean, train_sd) = mean_sd(&split.train.values());
    let mut spec = ModelSpec::new(Variant::Temporal, vec![8, 8], 4, 64);
    spec.time_scale = 2.0;
    spec.value_shift = mean;
    spec.value_scale = 1.0 / train_sd;
    spec.seed = 3;
    let unit = spec.value_unit();
    let mut model = EnergyModel::new(spec)?;
    let schedule = NoiseSchedule::geometric(unit, 0.01 * unit, 10)?;
    let mut cfg = TrainConfig::new(epochs, 256, 3e-3, schedule.clone());
    cfg.level_mode = LevelMode::OnePerSample;
    cfg.lr_min = Some(1e-5);
    let trace = train(&mut model, &split.train, &cfg, None)?;
    println!("final loss {:.4}", trace.last().copied().unwrap_or(f64::NAN));

    let queries = queries_of(&split.test, &(0..split.test.len()).collect::<Vec<_>>());
    let grid = GridConfig::new(model.spec.to_data(-5.0), model.spec.to_data(5.0), 501)?;
    let init = initial_values(&queries, &split.train);
    let langevin = LangevinConfig::new(schedule, 2e-5 * unit * unit, 50);
    for (name, sampler) in [("grid", Sampler::Grid(grid)), ("langevin", Sampler::Langevin(langevin))] {
        let out = complete(&model, &queries, &init, &sampler, 1)?;
        let r = rmse(&out.values, &truth)?;
        println!("{name:>8}: rmse {r:.4} ({:.3} of sd), mae {:.4}", r / sd, mae(&out.values, &truth)?);
    }
    Ok(())
}
