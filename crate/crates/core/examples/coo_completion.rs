//! Sparse completion from COO files: a 20 x 15 x 10 CP tensor with 30% of
//! its entries observed is written to disk, read back, fitted at several
//! ranks and completed by annealed Langevin sampling.
//!
//! cargo run --release --example coo_completion

use score_tensor::datagen::{apply_missing, cp_value, gen_factors, FactorLaw, MissingMode};
use score_tensor::dsm::{queries_of, train, TrainConfig};
use score_tensor::energy::{EnergyModel, ModelSpec, Variant};
use score_tensor::io::{load_coo, save_coo};
use score_tensor::metrics::{mae, rmse};
use score_tensor::recovery::{complete, initial_values, Sampler};
use score_tensor::samplers::LangevinConfig;
use score_tensor::tensor::{Entry, MultiIndex, NoiseSchedule, SparseTensor};

fn main() -> score_tensor::Result<()> {
    let dims = [20, 15, 10];
    let z = gen_factors(&dims, 3, &FactorLaw::Uniform, 1)?;
    let total: usize = dims.iter().product();
    let entries = (0..total)
        .map(|lin| {
            let idx = MultiIndex::from_linear(lin, &dims);
            cp_value(&z, &idx).map(|v| Entry::new(idx, v))
        })
        .collect::<score_tensor::Result<Vec<_>>>()?;
    let split = apply_missing(&SparseTensor::new(dims.to_vec(), entries)?, MissingMode::Random { rate: 0.3 }, 2)?;

    let dir = std::env::temp_dir().join("score-tensor-coo-example");
    std::fs::create_dir_all(&dir)?;
    save_coo(&split.train, dir.join("train.coo"))?;
    save_coo(&split.test, dir.join("test.coo"))?;
    let (train_set, test) = (load_coo(dir.join("train.coo"))?, load_coo(dir.join("test.coo"))?);
    println!("{} observed, {} held out, files in {}", train_set.len(), test.len(), dir.display());

    let queries = queries_of(&test, &(0..test.len()).collect::<Vec<_>>());
    let init = initial_values(&queries, &train_set);
    let truth = test.values();
    let schedule = NoiseSchedule::geometric(0.2, 0.01, 10)?;
    for rank in [2, 3, 5] {
        let mut spec = ModelSpec::new(Variant::Tabular, dims.to_vec(), rank, 64);
        spec.seed = 3;
        let mut model = EnergyModel::new(spec)?;
        let mut cfg = TrainConfig::new(60, 128, 2e-3, schedule.clone());
        cfg.lr_min = Some(1e-5);
        train(&mut model, &train_set, &cfg, None)?;
        let sampler = Sampler::Langevin(LangevinConfig::new(schedule.clone(), 2e-5, 30));
        let out = complete(&model, &queries, &init, &sampler, 1)?;
        println!("rank {rank}: rmse {:.4}, mae {:.4}", rmse(&out.values, &truth)?, mae(&out.values, &truth)?);
    }
    Ok(())
}
