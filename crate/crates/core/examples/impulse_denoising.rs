//! Removes 10% unit impulses from a 12 x 12 x 12 rank-3 tensor with five
//! rounds of block coordinate descent and reports the error per round.
//!
//! cargo run --release --example impulse_denoising

use score_tensor::datagen::{add_impulses, gen_low_rank};
use score_tensor::dsm::TrainConfig;
use score_tensor::energy::{EnergyModel, ModelSpec, Variant};
use score_tensor::metrics::rmse;
use score_tensor::recovery::{denoise_bcd, BcdConfig, Sampler};
use score_tensor::samplers::GridConfig;
use score_tensor::tensor::{NoiseSchedule, SparseTensor};

fn main() -> score_tensor::Result<()> {
    let dims = [12, 12, 12];
    let clean = gen_low_rank(&dims, 3, 0.5, 1)?;
    let noisy = add_impulses(&clean, 0.1, 1.0, false, 2)?;
    let observed = SparseTensor::from_dense(&noisy.image);
    let values = observed.values();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt();

    let mut spec = ModelSpec::new(Variant::Tabular, dims.to_vec(), 6, 32);
    spec.value_shift = mean;
    spec.value_scale = 1.0 / sd;
    spec.seed = 3;
    let schedule = NoiseSchedule::geometric(0.3 * sd, 0.01 * sd, 8)?;
    let train_cfg = |epochs| TrainConfig::new(epochs, 256, 2e-3, schedule.clone());
    let cfg = BcdConfig {
        iterations: 5,
        lambda_s: 0.5,
        pretrain: Some(train_cfg(20)),
        retrain: train_cfg(5),
        sampler: Sampler::Grid(GridConfig::new(spec.to_data(-4.0), spec.to_data(4.0), 401)?),
        workers: 1,
    };
    let mut model = EnergyModel::new(spec)?;
    println!("input rmse {:.4}, {} impulses", rmse(noisy.image.values(), clean.values())?, noisy.impulses.len());
    let out = denoise_bcd(&observed, &mut model, &cfg, |state| {
        let r = rmse(&state.x, clean.values()).unwrap_or(f64::NAN);
        let flagged = state.s.iter().filter(|s| **s != 0.0).count();
        println!("round {}: rmse {r:.4}, {flagged} entries flagged sparse", state.iteration);
    })?;
    println!("final rmse {:.4}", rmse(out.clean.values(), clean.values())?);
    Ok(())
}
