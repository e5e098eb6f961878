//! Fits the energy model to per-entry draws from one of the simulation laws
//! and compares the learned density of an entry with the true law.
//!
//! cargo run --release --example simulation_density -- [beta|mog|exponential] [epochs]

use std::path::PathBuf;

use score_tensor::cli::{grid_density, plot_density};
use score_tensor::datagen::{cp_value, gen_entry_samples, gen_factors, sim_density, FactorLaw, SimLaw, SimSpec};
use score_tensor::dsm::{train, TrainConfig};
use score_tensor::energy::{EnergyModel, ModelSpec, Query, Variant};
use score_tensor::metrics::{local_maxima, tv_distance};
use score_tensor::samplers::GridConfig;
use score_tensor::tensor::{MultiIndex, NoiseSchedule};

fn main() -> score_tensor::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let law = match args.get(1).map(String::as_str).unwrap_or("mog") {
        "beta" => SimLaw::Beta,
        "exponential" => SimLaw::Exponential,
        _ => SimLaw::Mog,
    };
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300);
    let n = 8;
    let z = gen_factors(&[n, n], 5, &FactorLaw::Uniform, 1)?;
    let data = gen_entry_samples(&z, &SimSpec::standard(law, 2))?;

    // The energy is not conditioned on the noise level, so one small level
    // keeps the learned density close to the data density.
    let mut spec = ModelSpec::new(Variant::Tabular, vec![n, n], 5, 64);
    spec.seed = 3;
    let mut model = EnergyModel::new(spec)?;
    let mut cfg = TrainConfig::new(epochs, 128, 3e-3, NoiseSchedule::single(0.05)?);
    cfg.lr_min = Some(1e-5);
    let trace = train(&mut model, &data, &cfg, None)?;
    println!("final loss {:.4}", trace.last().copied().unwrap_or(f64::NAN));

    // Probe the entry whose parameter is closest to 2.5, where the two
    // mixture components are well separated.
    let (entry, m) = (0..n * n)
        .map(|k| MultiIndex::from([k / n, k % n]))
        .map(|i| cp_value(&z, &i).map(|m| (i, m)))
        .collect::<score_tensor::Result<Vec<_>>>()?
        .into_iter()
        .min_by(|a, b| (a.1 - 2.5).abs().total_cmp(&(b.1 - 2.5).abs()))
        .expect("non-empty");
    let (lo, hi) = match law {
        SimLaw::Beta => (0.0, 1.0),
        SimLaw::Mog => (-1.5, 2.0),
        SimLaw::Exponential => (0.0, 4.0 / m),
    };
    let grid = GridConfig::new(lo, hi, 200)?;
    let query = Query::new(entry.clone());
    let learned: Vec<f64> = grid_density(&model, &query, &grid)?.into_iter().map(|p| p.1).collect();
    let truth: Vec<(f64, f64)> = grid.values().into_iter().map(|x| (x, sim_density(law, m, x))).collect();
    let q: Vec<f64> = truth.iter().map(|p| p.1).collect();
    println!("m = {m:.3}");
    println!("total variation {:.4}", tv_distance(&learned, &q, hi - lo)?);
    println!("learned modes {}, true modes {}", local_maxima(&learned), local_maxima(&q));

    let mut tvs = Vec::new();
    for k in 0..n * n {
        let idx = MultiIndex::from([k / n, k % n]);
        let mk = cp_value(&z, &idx)?;
        let p: Vec<f64> = grid_density(&model, &Query::new(idx), &grid)?.into_iter().map(|p| p.1).collect();
        let t: Vec<f64> = grid.values().into_iter().map(|x| sim_density(law, mk, x)).collect();
        tvs.push(tv_distance(&p, &t, hi - lo)?);
    }
    tvs.sort_by(f64::total_cmp);
    println!("total variation over entries: median {:.4}, worst {:.4}", tvs[tvs.len() / 2], tvs[tvs.len() - 1]);

    let samples: Vec<f64> = data.entries().iter().filter(|e| e.index == entry).map(|e| e.value).collect();
    let dir = PathBuf::from("target/simulation_density");
    plot_density(&model, &query, &grid, &samples, Some(&truth), &dir)?;
    println!("plot written to {}", dir.join("density.svg").display());
    Ok(())
}
