//! Annealed Langevin sampling from a known quadratic energy. With the
//! noise scales from 1 down to 0.01 the chains end up standard normal.
//!
//! cargo run --release --example langevin_sampling

use score_tensor::energy::stubs::Quadratic;
use score_tensor::energy::Query;
use score_tensor::samplers::{anneal, LangevinConfig};
use score_tensor::tensor::NoiseSchedule;

fn main() -> score_tensor::Result<()> {
    let chains = 2000;
    let queries: Vec<Query> = (0..chains).map(|k| Query::new([k])).collect();
    for steps in [5, 20, 100] {
        let mut cfg = LangevinConfig::new(NoiseSchedule::geometric(1.0, 0.01, 10)?, 2e-5, steps);
        cfg.seed = 7;
        let out = anneal(&Quadratic::new(0.0, 1.0), &queries, &vec![3.0; chains], &cfg, 1)?;
        let mean = out.values.iter().sum::<f64>() / chains as f64;
        let var = out.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (chains - 1) as f64;
        println!("{steps:>3} steps per level: mean {mean:+.4}, variance {var:.4}");
    }
    Ok(())
}
