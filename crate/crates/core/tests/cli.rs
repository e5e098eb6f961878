use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_score-tensor")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).expect("utf-8")
}

fn metric(stdout: &str, name: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{name},")))
        .unwrap_or_else(|| panic!("no {name} in {stdout}"))
        .parse()
        .expect("number")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn generate_then_eval_agrees_with_generated_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gen");
    let gen = ok(&["generate", "--preset", "low-rank-denoise", "--set", "data.dims=[4, 4, 4]", "--seed", "5", "--out", path(&out)]);
    let noisy = out.join("noisy.dense");
    let clean = out.join("clean.dense");
    assert!(noisy.exists() && clean.exists() && out.join("impulses.idx").exists());
    let eval = ok(&["eval", "--pred", path(&noisy), "--truth", path(&clean), "--out", path(&dir.path().join("eval"))]);
    assert!((metric(&gen, "psnr_input") - metric(&eval, "psnr")).abs() < 1e-12);
    assert!(metric(&eval, "rmse") >= metric(&eval, "mae"));
}

#[test]
fn manifest_reproduces_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["generate", "--preset", "sim-mog", "--set", "data.dims=[3, 3]", "--set", "data.samples=5", "--seed", "9", "--out", path(&a)]);
    ok(&["generate", "--config", path(&a.join("manifest.toml")), "--out", path(&b)]);
    assert_eq!(fs::read(a.join("data.coo")).unwrap(), fs::read(b.join("data.coo")).unwrap());
}

#[test]
fn seed_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str| {
        let out = dir.path().join(seed);
        ok(&["generate", "--preset", "sim-beta", "--set", "data.dims=[3, 3]", "--set", "data.samples=5", "--seed", seed, "--out", path(&out)]);
        fs::read(out.join("data.coo")).unwrap()
    };
    assert_ne!(run("1"), run("2"));
}

#[test]
fn train_checkpoint_feeds_completion() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    let common = ["--preset", "continuous", "--set", "data.dims=[3, 3]", "--set", "data.times=30", "--set", "train.epochs=2", "--seed", "4", "--workers", "1"];
    let with = |verb: &str, out: &Path, extra: &[&str]| {
        let mut args = vec![verb];
        args.extend_from_slice(&common);
        args.extend_from_slice(&["--out", path(out)]);
        args.extend_from_slice(extra);
        ok(&args)
    };
    with("generate", &gen, &[]);
    assert!(gen.join("train.coo").exists() && gen.join("test.idx").exists());
    let trained = dir.path().join("train");
    let t = with("train", &trained, &[]);
    assert!(metric(&t, "final_loss").is_finite());
    assert!(trained.join("model").join("params.bin").exists());
    let checkpoint = format!("model.checkpoint=\"{}\"", path(&trained.join("model")));
    let fresh = with("complete", &dir.path().join("c1"), &[]);
    let loaded = with("complete", &dir.path().join("c2"), &["--set", &checkpoint]);
    // Training is seeded the same way in both, so the loaded checkpoint gives the same predictions.
    assert_eq!(metric(&fresh, "rmse"), metric(&loaded, "rmse"));
    let eval = ok(&[
        "eval",
        "--pred",
        path(&dir.path().join("c1").join("pred.coo")),
        "--truth",
        path(&gen.join("test.coo")),
        "--out",
        path(&dir.path().join("eval")),
    ]);
    assert!((metric(&eval, "rmse") - metric(&fresh, "rmse")).abs() < 1e-12);
}

#[test]
fn plot_writes_density_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plot");
    ok(&["plot", "--preset", "sim-exponential", "--set", "data.dims=[3, 3]", "--set", "data.samples=10", "--set", "train.epochs=1", "--out", path(&out)]);
    let csv = fs::read_to_string(out.join("density.csv")).unwrap();
    assert!(csv.lines().count() > 10);
    assert!(fs::read_to_string(out.join("density.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    for (args, needle) in [
        (vec!["train", "--preset", "nope", "--out", out], "nope"),
        (vec!["train", "--preset", "alog", "--out", out], "data"),
        (vec!["train", "--preset", "sim-mog", "--set", "train.epochs", "--out", out], "train.epochs"),
        (vec!["complete", "--preset", "sim-mog", "--out", out], "sim data"),
        (vec!["eval", "--out", out], "pred"),
    ] {
        let res = bin(&args);
        assert!(!res.status.success(), "{args:?} should fail");
        let err = String::from_utf8_lossy(&res.stderr);
        assert!(err.contains(needle), "{args:?}: {err}");
    }
}
