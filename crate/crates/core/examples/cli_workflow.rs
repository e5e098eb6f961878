//! Drives the experiment runner from code: loads a bundled preset, applies
//! overrides as `--set` would, and runs generate then plot into a
//! temporary directory.
//!
//! cargo run --release --example cli_workflow

use score_tensor::cli::{resolve_config, run_config, CommonArgs, Task};

fn main() -> score_tensor::Result<()> {
    let out = std::env::temp_dir().join("score-tensor-cli-example");
    let args = CommonArgs {
        preset: Some("sim-beta".into()),
        set: vec!["data.dims=[4, 4]".into(), "data.samples=100".into(), "train.epochs=50".into()],
        out: Some(out.clone()),
        seed: Some(1),
        workers: Some(1),
        ..CommonArgs::default()
    };
    let cfg = resolve_config(&args)?;
    for task in [Task::Generate, Task::Plot] {
        let summary = run_config(&cfg, task)?;
        println!("{task:?} -> {}", summary.out.display());
        for (k, v) in &summary.metrics {
            println!("  {k} = {v:.4}");
        }
    }
    println!("files: {:?}", std::fs::read_dir(&out)?.filter_map(|e| e.ok().map(|e| e.file_name())).collect::<Vec<_>>());
    Ok(())
}
