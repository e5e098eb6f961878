//! Experiment runner behind the `score-tensor` binary.
//!
//! A run is described by a TOML document (optionally starting from a bundled
//! preset) with per-key `--set a.b=value` overrides. Every verb writes its
//! artifacts and a `manifest.toml` into the output directory; the manifest is
//! itself a valid config that reproduces the run.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::datagen::{self, FactorLaw, MissingMode, NoiseCaseSpec, SimLaw, SimSpec};
use crate::dsm::{queries_of, train, write_loss_trace, LevelMode, SmoothConfig, TrainConfig};
use crate::energy::{energies, EnergyFunction, EnergyModel, Fusion, ModelSpec, Query, Variant};
use crate::error::{Error, Result};
use crate::io;
use crate::metrics;
use crate::nn;
use crate::recovery::{complete, denoise_bcd, initial_values, BcdConfig, Sampler};
use crate::rng::derive_seed;
use crate::samplers::{GridConfig, LangevinConfig};
use crate::tensor::{DenseTensor, FactorSet, MultiIndex, NoiseSchedule, SparseTensor};

pub const PRESETS: &[(&str, &str)] = &[
    ("alog", include_str!("../presets/alog.toml")),
    ("acc", include_str!("../presets/acc.toml")),
    ("air", include_str!("../presets/air.toml")),
    ("click", include_str!("../presets/click.toml")),
    ("rgb-inpaint", include_str!("../presets/rgb-inpaint.toml")),
    ("msi-inpaint", include_str!("../presets/msi-inpaint.toml")),
    ("video-inpaint", include_str!("../presets/video-inpaint.toml")),
    ("msi-denoise", include_str!("../presets/msi-denoise.toml")),
    ("sim-beta", include_str!("../presets/sim-beta.toml")),
    ("sim-mog", include_str!("../presets/sim-mog.toml")),
    ("sim-exponential", include_str!("../presets/sim-exponential.toml")),
    ("continuous", include_str!("../presets/continuous.toml")),
    ("low-rank-denoise", include_str!("../presets/low-rank-denoise.toml")),
];

#[derive(Parser, Debug, Clone)]
#[command(name = "score-tensor", version, about = "Score-based tensor completion and denoising")]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Verb {
    /// Write synthetic data, splits and corrupted images.
    Generate(CommonArgs),
    /// Fit energy models and save checkpoints.
    Train(CommonArgs),
    /// Fit, then fill held-out entries and report errors.
    Complete(CommonArgs),
    /// Separate sparse noise from a dense observation.
    Denoise(CommonArgs),
    /// Compare a prediction file with a reference.
    Eval(EvalArgs),
    /// Normalized grid density of one entry as CSV and SVG.
    Plot(CommonArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// TOML experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bundled preset loaded before `--config`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Dotted override, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Index list restricting the comparison.
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Generate,
    Train,
    Complete,
    Denoise,
    Eval,
    Plot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// COO text files.
    Coo,
    /// Per-entry draws from a simulation law.
    Sim,
    /// The temporal-basis continuous tensor.
    Continuous,
    /// A dense `[0, 1]` image.
    Image,
    /// Low-rank tensor with additive impulses.
    LowRank,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingKind {
    Random,
    Burst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: Option<DataSource>,
    pub path: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub dims: Option<Vec<usize>>,
    pub rank: Option<usize>,
    pub law: Option<SimLaw>,
    pub samples: usize,
    pub times: usize,
    pub missing: Option<MissingKind>,
    /// Fraction of entries kept for training in random mode.
    pub rate: Option<f64>,
    pub starts: usize,
    pub fraction: f64,
    pub noise_case: Option<u8>,
    pub offset: f64,
    pub impulse_rate: f64,
    pub impulse_magnitude: f64,
    pub peak: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: None,
            path: None,
            train: None,
            test: None,
            dims: None,
            rank: None,
            law: None,
            samples: 200,
            times: 200,
            missing: None,
            rate: None,
            starts: 4,
            fraction: 0.05,
            noise_case: None,
            offset: 0.5,
            impulse_rate: 0.1,
            impulse_magnitude: 1.0,
            peak: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub rank: Option<usize>,
    /// Rank sweep; one model per value.
    pub ranks: Option<Vec<usize>>,
    /// Uniform hidden widths of every network.
    pub network: Vec<usize>,
    pub fusion: Fusion,
    pub time_features: Option<usize>,
    pub time_scale: Option<f64>,
    pub coord_scale: Option<f64>,
    pub factor_std: Option<f64>,
    pub trainable_frequencies: bool,
    /// Feed the network values centred and scaled by the training mean and
    /// standard deviation; noise scales and grid bounds are then read in
    /// those units.
    pub standardize: bool,
    /// Load this checkpoint directory instead of training.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Tabular,
            rank: None,
            ranks: None,
            network: vec![64, 64],
            fusion: Fusion::Concat,
            time_features: None,
            time_scale: None,
            coord_scale: None,
            factor_std: None,
            trainable_frequencies: false,
            standardize: false,
            checkpoint: None,
        }
    }
}

impl ModelConfig {
    pub fn rank_list(&self) -> Vec<usize> {
        match (&self.ranks, self.rank) {
            (Some(r), _) => r.clone(),
            (None, Some(r)) => vec![r],
            (None, None) => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine-decay target for the learning rate.
    pub lr_min: Option<f64>,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub levels: usize,
    pub level_mode: LevelMode,
    pub smooth_weight: Option<f64>,
    pub smooth_sigma: Option<f64>,
    pub max_loss: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: None,
            batch_size: 256,
            lr: 1e-3,
            lr_min: None,
            sigma_max: 0.2,
            sigma_min: 0.01,
            levels: 10,
            level_mode: LevelMode::AllLevels,
            smooth_weight: None,
            smooth_sigma: None,
            max_loss: 1e6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Langevin,
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub kind: SamplerKind,
    pub epsilon: f64,
    pub steps: usize,
    pub final_denoise: bool,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self { kind: SamplerKind::Langevin, epsilon: 2e-5, steps: 100, final_denoise: false, lo: 0.0, hi: 1.0, points: 256 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseSection {
    pub iterations: usize,
    pub lambda_s: f64,
    /// Epochs of each retraining pass; defaults to `train.epochs`.
    pub retrain_epochs: Option<usize>,
}

impl Default for DenoiseSection {
    fn default() -> Self {
        Self { iterations: 5, lambda_s: 0.1, retrain_epochs: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub pred: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    /// Metric names; by default every metric that applies.
    pub metrics: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSection {
    pub entry: Option<Vec<usize>>,
    pub time: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub points: usize,
}

impl Default for PlotSection {
    fn default() -> Self {
        Self { entry: None, time: None, lo: None, hi: None, points: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub task: Option<Task>,
    /// Written into manifests; ignored on input.
    #[serde(default)]
    pub version: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub denoise: DenoiseSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub plot: PlotSection,
}

fn one() -> usize {
    1
}

pub fn preset(name: &str) -> Result<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        Error::Config(format!("unknown preset `{name}`; available: {}", names.join(", ")))
    })
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `a.b.c=value`; the value is read as TOML, or as a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{assignment}`")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad key `{key}`")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = table;
    for part in &path[..path.len() - 1] {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        node = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::Config(format!("`{part}` in `{key}` is not a table"))),
        };
    }
    node.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

/// Preset, then config file, then `--set` overrides, then the direct flags.
pub fn resolve_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut table = toml::Table::new();
    if let Some(name) = &args.preset {
        merge(&mut table, parse_table(preset(name)?, name)?);
    }
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        merge(&mut table, parse_table(&text, &path.display().to_string())?);
    }
    for s in &args.set {
        apply_override(&mut table, s)?;
    }
    let mut cfg: ExperimentConfig =
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(o) = &args.out {
        cfg.out = Some(o.clone());
    }
    Ok(cfg)
}

impl ExperimentConfig {
    /// Checks the fields `task` needs and reports every problem at once.
    pub fn validate(&self, task: Task) -> Result<()> {
        let mut errs: Vec<String> = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        need(self.workers >= 1, "workers: must be at least 1");
        if task == Task::Eval {
            need(self.eval.pred.is_some(), "eval.pred: required");
            need(self.eval.truth.is_some(), "eval.truth: required");
            return finish(errs);
        }
        let d = &self.data;
        match d.source {
            None => need(false, "data.source: required (coo, sim, continuous, image or low-rank)"),
            Some(DataSource::Coo) => {
                need(d.path.is_some() || d.train.is_some(), "data.path or data.train: required for coo data");
                if task == Task::Complete && d.test.is_none() {
                    need(d.path.is_some() && d.rate.is_some(), "data.test (or data.path with data.rate): required to complete");
                }
            }
            Some(DataSource::Sim) => {
                need(d.law.is_some(), "data.law: required for sim data");
                need(d.dims.is_some(), "data.dims: required for sim data");
                need(d.rank.is_some(), "data.rank: required for sim data");
                need(d.samples >= 1, "data.samples: must be at least 1");
                need(task != Task::Complete && task != Task::Denoise, "data.source: sim data only supports generate, train and plot");
            }
            Some(DataSource::Continuous) => {
                need(d.dims.as_ref().is_some_and(|v| v.len() == 2), "data.dims: two modes required for continuous data");
                need(d.times >= 1, "data.times: must be at least 1");
            }
            Some(DataSource::Image) => need(d.path.is_some(), "data.path: required for image data"),
            Some(DataSource::LowRank) => {
                need(d.dims.is_some(), "data.dims: required for low-rank data");
                need(d.rank.is_some(), "data.rank: required for low-rank data");
            }
        }
        if let Some(r) = d.rate {
            need(r > 0.0 && r < 1.0, "data.rate: must be in (0, 1)");
        }
        need(d.fraction > 0.0 && d.fraction < 1.0, "data.fraction: must be in (0, 1)");
        if let Some(c) = d.noise_case {
            need((1..=6).contains(&c), "data.noise_case: must be 1-6");
        }
        if task == Task::Complete {
            need(d.source != Some(DataSource::LowRank), "data.source: low-rank data is for denoise");
            if d.source == Some(DataSource::Image) {
                need(d.rate.is_some(), "data.rate: required to complete an image");
            }
        }
        if task == Task::Denoise {
            need(
                matches!(d.source, Some(DataSource::Image) | Some(DataSource::LowRank) | None),
                "data.source: denoise needs image or low-rank data",
            );
            if d.source == Some(DataSource::Image) {
                need(d.noise_case.is_some(), "data.noise_case: required to denoise an image");
            }
            need(self.denoise.iterations >= 1, "denoise.iterations: must be at least 1");
            need(self.denoise.lambda_s >= 0.0, "denoise.lambda_s: must be non-negative");
        }
        let fits = matches!(task, Task::Train | Task::Complete | Task::Denoise)
            || (task == Task::Plot && self.model.checkpoint.is_none());
        if fits {
            let ranks = self.model.rank_list();
            need(!ranks.is_empty(), "model.rank or model.ranks: required");
            need(ranks.iter().all(|&r| r >= 1), "model.ranks: every rank must be at least 1");
            need(self.model.network.len() == 2, "model.network: two hidden layers expected");
            need(
                self.model.network.first().is_some_and(|&w| w >= 1 && self.model.network.iter().all(|&v| v == w)),
                "model.network: widths must be equal and positive",
            );
            need(self.train.epochs.is_some(), "train.epochs: required");
            let t = &self.train;
            need(t.batch_size >= 1, "train.batch_size: must be at least 1");
            need(t.lr > 0.0, "train.lr: must be positive");
            need(t.lr_min.is_none_or(|m| m >= 0.0 && m <= t.lr), "train.lr_min: must lie in [0, lr]");
            need(t.sigma_min > 0.0 && t.sigma_max >= t.sigma_min, "train.sigma_max/sigma_min: need sigma_max >= sigma_min > 0");
            need(t.levels >= 1, "train.levels: must be at least 1");
            need(t.levels == 1 || t.sigma_max > t.sigma_min, "train.levels: several levels need sigma_max > sigma_min");
        }
        if matches!(task, Task::Complete | Task::Denoise) {
            let s = &self.sampler;
            match s.kind {
                SamplerKind::Langevin => need(s.epsilon > 0.0, "sampler.epsilon: must be positive"),
                SamplerKind::Grid => need(s.lo < s.hi && s.points >= 2, "sampler.lo/hi/points: need lo < hi and points >= 2"),
            }
        }
        if task == Task::Plot {
            need(self.plot.entry.is_some(), "plot.entry: required");
            need(self.plot.points >= 2, "plot.points: must be at least 2");
        }
        finish(errs)
    }

    fn out_dir(&self, task: Task) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            let name = if self.name.is_empty() { format!("{task:?}").to_lowercase() } else { self.name.clone() };
            PathBuf::from("runs").join(name)
        })
    }

    /// Noise scales with every σ multiplied by `unit`.
    pub fn schedule(&self, unit: f64) -> Result<NoiseSchedule> {
        let t = &self.train;
        if t.levels == 1 {
            NoiseSchedule::single(unit * t.sigma_max)
        } else {
            NoiseSchedule::geometric(unit * t.sigma_max, unit * t.sigma_min, t.levels)
        }
    }

    pub fn train_config(&self, epochs: usize, spec: &ModelSpec) -> Result<TrainConfig> {
        let t = &self.train;
        let mut cfg = TrainConfig::new(epochs, t.batch_size, t.lr, self.schedule(spec.value_unit())?);
        cfg.level_mode = t.level_mode;
        cfg.lr_min = t.lr_min;
        cfg.seed = derive_seed(self.seed, "train", &[spec.rank as u64]);
        cfg.workers = self.workers;
        cfg.max_loss = t.max_loss;
        cfg.smooth = t.smooth_weight.map(|weight| SmoothConfig { weight, sigma: t.smooth_sigma });
        Ok(cfg)
    }

    /// Architecture for one rank; `observed` sets the value standardization when enabled.
    pub fn model_spec(&self, dims: &[usize], rank: usize, observed: &SparseTensor) -> Result<ModelSpec> {
        let m = &self.model;
        let mut spec = ModelSpec::new(m.variant, dims.to_vec(), rank, m.network[0]);
        spec.fusion = m.fusion;
        if let Some(v) = m.time_features {
            spec.time_features = v;
        }
        if let Some(v) = m.time_scale {
            spec.time_scale = v;
        }
        if let Some(v) = m.coord_scale {
            spec.coord_scale = v;
        }
        if let Some(v) = m.factor_std {
            spec.factor_std = v;
        }
        spec.trainable_frequencies = m.trainable_frequencies;
        if m.standardize {
            let (mean, sd) = mean_sd(&observed.values());
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(Error::Config("model.standardize: observed values have no spread".into()));
            }
            spec.value_shift = mean;
            spec.value_scale = 1.0 / sd;
        }
        spec.seed = derive_seed(self.seed, "model", &[rank as u64]);
        Ok(spec)
    }

    /// Sampler for a model; σ, ε and grid bounds are converted from network
    /// input units to data units.
    pub fn sampler(&self, spec: &ModelSpec) -> Result<Sampler> {
        let s = &self.sampler;
        let unit = spec.value_unit();
        Ok(match s.kind {
            SamplerKind::Langevin => {
                let mut cfg = LangevinConfig::new(self.schedule(unit)?, s.epsilon * unit * unit, s.steps);
                cfg.seed = derive_seed(self.seed, "sampler", &[spec.rank as u64]);
                cfg.final_denoise = s.final_denoise;
                Sampler::Langevin(cfg)
            }
            SamplerKind::Grid => Sampler::Grid(GridConfig::new(spec.to_data(s.lo), spec.to_data(s.hi), s.points)?),
        })
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

fn finish(errs: Vec<String>) -> Result<()> {
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errs.join("; ")))
    }
}

/// Observations assembled from the `[data]` section.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Option<SparseTensor>,
    pub test: Option<SparseTensor>,
    /// Clean reference (images, low-rank data).
    pub clean: Option<DenseTensor>,
    /// Dense noisy observation for denoising.
    pub noisy: Option<DenseTensor>,
    /// Positions corrupted by impulses.
    pub impulses: Vec<usize>,
    /// Generating factors and law of simulation data.
    pub sim: Option<(FactorSet, SimLaw)>,
}

impl Dataset {
    pub fn dims(&self) -> Result<Vec<usize>> {
        if let Some(t) = &self.train {
            return Ok(t.dims().to_vec());
        }
        self.noisy
            .as_ref()
            .or(self.clean.as_ref())
            .map(|d| d.dims().to_vec())
            .ok_or_else(|| Error::Config("data set is empty".into()))
    }

    fn training(&self) -> Result<&SparseTensor> {
        self.train.as_ref().ok_or_else(|| Error::Config("no training observations in this data set".into()))
    }
}

fn split(data: &SparseTensor, d: &DataConfig, seed: u64, default: Option<MissingKind>) -> Result<(SparseTensor, Option<SparseTensor>)> {
    let kind = d.missing.or(if d.rate.is_some() { Some(MissingKind::Random) } else { default });
    let mode = match kind {
        None => return Ok((data.clone(), None)),
        Some(MissingKind::Random) => MissingMode::Random {
            rate: d.rate.ok_or_else(|| Error::Config("data.rate: required for random missingness".into()))?,
        },
        Some(MissingKind::Burst) => MissingMode::Burst { starts: d.starts, fraction: d.fraction },
    };
    let s = datagen::apply_missing(data, mode, derive_seed(seed, "split", &[]))?;
    Ok((s.train, Some(s.test)))
}

pub fn load_dataset(cfg: &ExperimentConfig, task: Task) -> Result<Dataset> {
    let d = &cfg.data;
    let seed = derive_seed(cfg.seed, "data", &[]);
    let mut out = Dataset::default();
    match d.source.ok_or_else(|| Error::Config("data.source: required".into()))? {
        DataSource::Coo => {
            if let Some(p) = &d.train {
                out.train = Some(io::load_coo(p)?);
                out.test = d.test.as_ref().map(io::load_coo).transpose()?;
                if let (Some(a), Some(b)) = (&out.train, &out.test) {
                    if a.dims() != b.dims() {
                        return Err(Error::Config(format!("train dims {:?} differ from test dims {:?}", a.dims(), b.dims())));
                    }
                }
            } else {
                let path = d.path.as_ref().ok_or_else(|| Error::Config("data.path: required".into()))?;
                let all = io::load_coo(path)?;
                let (train, test) = split(&all, d, seed, None)?;
                out.train = Some(train);
                out.test = test;
            }
        }
        DataSource::Sim => {
            let dims = d.dims.clone().unwrap_or_default();
            let rank = d.rank.unwrap_or(0);
            let law = d.law.ok_or_else(|| Error::Config("data.law: required".into()))?;
            let z = datagen::gen_factors(&dims, rank, &FactorLaw::Uniform, derive_seed(seed, "factors", &[]))?;
            let spec = SimSpec { dims, rank, law, samples: d.samples, seed: derive_seed(seed, "samples", &[]) };
            out.train = Some(datagen::gen_entry_samples(&z, &spec)?);
            out.sim = Some((z, law));
        }
        DataSource::Continuous => {
            let dims = d.dims.clone().unwrap_or_default();
            if dims.len() != 2 {
                return Err(Error::Config("data.dims: two modes required".into()));
            }
            let z = datagen::continuous_factors([dims[0], dims[1]], derive_seed(seed, "factors", &[]))?;
            let all = datagen::gen_continuous(&z, &datagen::uniform_times(d.times))?;
            let (train, test) = split(&all, d, seed, Some(MissingKind::Burst))?;
            out.train = Some(train);
            out.test = test;
        }
        DataSource::Image => {
            let path = d.path.as_ref().ok_or_else(|| Error::Config("data.path: required".into()))?;
            let image = io::load_dense(path)?;
            if let Some(case) = d.noise_case {
                let c = datagen::corrupt(&image, &NoiseCaseSpec::case(case)?, derive_seed(seed, "noise", &[]))?;
                out.noisy = Some(c.image);
                out.impulses = c.impulses;
            }
            if task != Task::Denoise && d.rate.is_some() {
                let (train, test) = split(&SparseTensor::from_dense(&image), d, seed, None)?;
                out.train = Some(train);
                out.test = test;
            }
            out.clean = Some(image);
        }
        DataSource::LowRank => {
            let dims = d.dims.clone().unwrap_or_default();
            let clean = datagen::gen_low_rank(&dims, d.rank.unwrap_or(0), d.offset, derive_seed(seed, "low-rank", &[]))?;
            let c = datagen::add_impulses(&clean, d.impulse_rate, d.impulse_magnitude, false, derive_seed(seed, "impulses", &[]))?;
            out.noisy = Some(c.image);
            out.impulses = c.impulses;
            out.clean = Some(clean);
        }
    }
    Ok(out)
}

/// Writes `params.bin`, `params.manifest` and `model.toml`.
pub fn save_model(dir: &Path, model: &EnergyModel) -> Result<()> {
    let tensors: Vec<(String, ndarray::Array2<f64>)> =
        model.named_tensors().into_iter().map(|(n, _, t)| (n, t.clone())).collect();
    nn::save_checkpoint(dir, &tensors)?;
    let spec = toml::to_string(&model.spec).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join("model.toml"), spec)?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<EnergyModel> {
    let text = fs::read_to_string(dir.join("model.toml"))?;
    let spec: ModelSpec = toml::from_str(&text).map_err(|e| Error::Format(format!("model.toml: {e}")))?;
    let mut model = EnergyModel::new(spec)?;
    model.load_tensors(nn::load_checkpoint(dir)?)?;
    Ok(model)
}

/// `metric,value` lines in the given order.
pub fn write_metrics(path: &Path, rows: &[(String, f64)]) -> Result<()> {
    let mut s = String::from("metric,value\n");
    for (k, v) in rows {
        let _ = writeln!(s, "{k},{v}");
    }
    fs::write(path, s)?;
    Ok(())
}

/// Normalized density `exp(−E(x_g))/(Σ_h exp(−E(x_h))·Δx)` on an even grid,
/// with each of the `G` points owning a cell `Δx = (hi − lo)/G`.
pub fn grid_density<E: EnergyFunction>(model: &E, query: &Query, grid: &GridConfig) -> Result<Vec<(f64, f64)>> {
    grid.validate()?;
    let xs = grid.values();
    let qs = vec![query.clone(); xs.len()];
    let e = energies(model, &qs, &xs)?;
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("non-finite energy on the plot grid".into()));
    }
    let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = e.iter().map(|v| (lo - v).exp()).collect();
    let total: f64 = w.iter().sum();
    let dx = (grid.hi - grid.lo) / grid.points as f64;
    Ok(xs.into_iter().zip(w).map(|(x, w)| (x, w / total / dx)).collect())
}

fn svg_plot(curves: &[(&str, &[(f64, f64)])], histogram: &[(f64, f64, f64)], title: &str) -> String {
    let (w, h, m) = (640.0, 400.0, 40.0);
    let xs = curves.iter().flat_map(|(_, c)| c.iter().map(|p| p.0));
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let ymax = curves
        .iter()
        .flat_map(|(_, c)| c.iter().map(|p| p.1))
        .chain(histogram.iter().map(|b| b.2))
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let span = (x1 - x0).max(1e-12);
    let px = |x: f64| m + (x - x0) / span * (w - 2.0 * m);
    let py = |y: f64| h - m - y / ymax * (h - 2.0 * m);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{m}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n\
         <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        b = h - m,
        r = w - m
    );
    for &(a, b, d) in histogram {
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#c8d8ec\" stroke=\"#8aa6c8\"/>",
            px(a),
            py(d),
            (px(b) - px(a)).max(0.0),
            (h - m - py(d)).max(0.0)
        );
    }
    let colors = ["#d62728", "#2ca02c", "#1f77b4"];
    for (k, (label, c)) in curves.iter().enumerate() {
        let pts: Vec<String> = c.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let color = colors[k % colors.len()];
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>", pts.join(" "));
        let _ = writeln!(
            s,
            "<text x=\"{:.0}\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{label}</text>",
            w - m - 120.0,
            m + 16.0 * k as f64
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{m}\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"11\">{x0:.3}</text>\n\
         <text x=\"{:.0}\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"11\">{x1:.3}</text>",
        h - m + 16.0,
        w - m - 30.0,
        h - m + 16.0
    );
    s.push_str("</svg>\n");
    s
}

/// Writes `density.csv` (`x,density`) and `density.svg` with a histogram of
/// `samples` and, when given, a reference curve.
pub fn plot_density<E: EnergyFunction>(
    model: &E,
    query: &Query,
    grid: &GridConfig,
    samples: &[f64],
    reference: Option<&[(f64, f64)]>,
    dir: &Path,
) -> Result<Vec<(f64, f64)>> {
    let density = grid_density(model, query, grid)?;
    fs::create_dir_all(dir)?;
    let mut csv = String::from("x,density\n");
    for (x, p) in &density {
        let _ = writeln!(csv, "{x},{p}");
    }
    fs::write(dir.join("density.csv"), csv)?;
    let bins = 40;
    let mut hist = Vec::new();
    if !samples.is_empty() {
        let width = (grid.hi - grid.lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &v in samples {
            if v >= grid.lo && v <= grid.hi {
                counts[(((v - grid.lo) / width) as usize).min(bins - 1)] += 1;
            }
        }
        for (k, c) in counts.into_iter().enumerate() {
            let a = grid.lo + k as f64 * width;
            hist.push((a, a + width, c as f64 / (samples.len() as f64 * width)));
        }
    }
    let mut curves: Vec<(&str, &[(f64, f64)])> = vec![("model", &density)];
    if let Some(r) = reference {
        curves.push(("true", r));
    }
    fs::write(dir.join("density.svg"), svg_plot(&curves, &hist, &format!("entry {}", query.index)))?;
    Ok(density)
}

/// Paths and metric rows produced by a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub out: PathBuf,
    pub metrics: Vec<(String, f64)>,
}

fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

fn write_manifest(cfg: &ExperimentConfig, task: Task, out: &Path) -> Result<()> {
    let mut m = cfg.clone();
    m.task = Some(task);
    m.version = Some(version());
    m.out = Some(out.to_path_buf());
    let text = toml::to_string(&m).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(out.join("manifest.toml"), text)?;
    Ok(())
}

fn suffix(ranks: &[usize], rank: usize) -> String {
    if ranks.len() > 1 {
        format!("-r{rank}")
    } else {
        String::new()
    }
}

fn metric_name(base: &str, ranks: &[usize], rank: usize) -> String {
    if ranks.len() > 1 {
        format!("{base}_r{rank}")
    } else {
        base.to_string()
    }
}

/// Trains (or loads) one model and saves its checkpoint and loss trace.
fn fit(cfg: &ExperimentConfig, data: &SparseTensor, rank: usize, out: &Path, tag: &str, smooth: Option<&[f64]>) -> Result<(EnergyModel, Vec<f64>)> {
    if let Some(dir) = &cfg.model.checkpoint {
        return Ok((load_model(dir)?, Vec::new()));
    }
    let spec = cfg.model_spec(data.dims(), rank, data)?;
    let epochs = cfg.train.epochs.unwrap_or(0);
    let tc = cfg.train_config(epochs, &spec)?;
    let mut model = EnergyModel::new(spec)?;
    let trace = train(&mut model, data, &tc, smooth)?;
    save_model(&out.join(format!("model{tag}")), &model)?;
    write_loss_trace(out.join(format!("loss{tag}.csv")), &trace)?;
    Ok((model, trace))
}

pub fn run(cli: &Cli) -> Result<RunSummary> {
    match &cli.verb {
        Verb::Generate(a) => run_task(Task::Generate, a, None),
        Verb::Train(a) => run_task(Task::Train, a, None),
        Verb::Complete(a) => run_task(Task::Complete, a, None),
        Verb::Denoise(a) => run_task(Task::Denoise, a, None),
        Verb::Plot(a) => run_task(Task::Plot, a, None),
        Verb::Eval(a) => run_task(Task::Eval, &a.common, Some(a)),
    }
}

fn run_task(task: Task, args: &CommonArgs, eval: Option<&EvalArgs>) -> Result<RunSummary> {
    let mut cfg = resolve_config(args)?;
    if let Some(e) = eval {
        cfg.eval.pred = e.pred.clone().or(cfg.eval.pred);
        cfg.eval.truth = e.truth.clone().or(cfg.eval.truth);
        cfg.eval.mask = e.mask.clone().or(cfg.eval.mask);
    }
    run_config(&cfg, task)
}

/// Runs a resolved config.
pub fn run_config(cfg: &ExperimentConfig, task: Task) -> Result<RunSummary> {
    cfg.validate(task)?;
    let out = cfg.out_dir(task);
    fs::create_dir_all(&out)?;
    write_manifest(cfg, task, &out)?;
    let metrics = match task {
        Task::Generate => generate(cfg, &out)?,
        Task::Train => train_verb(cfg, &out)?,
        Task::Complete => complete_verb(cfg, &out)?,
        Task::Denoise => denoise_verb(cfg, &out)?,
        Task::Eval => eval_verb(cfg)?,
        Task::Plot => plot_verb(cfg, &out)?,
    };
    write_metrics(&out.join("metrics.csv"), &metrics)?;
    Ok(RunSummary { out, metrics })
}

fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<(String, f64)>> {
    let data = load_dataset(cfg, Task::Generate)?;
    let mut rows = Vec::new();
    if let Some(t) = &data.train {
        let name = if data.test.is_some() { "train.coo" } else { "data.coo" };
        io::save_coo(t, out.join(name))?;
        rows.push(("train_entries".to_string(), t.len() as f64));
    }
    if let Some(t) = &data.test {
        io::save_coo(t, out.join("test.coo"))?;
        let idx: Vec<MultiIndex> = t.entries().iter().map(|e| e.index.clone()).collect();
        io::save_index_list(&idx, out.join("test.idx"))?;
        rows.push(("test_entries".to_string(), t.len() as f64));
    }
    if let Some(c) = &data.clean {
        io::save_dense(c, out.join("clean.dense"))?;
    }
    if let Some(n) = &data.noisy {
        io::save_dense(n, out.join("noisy.dense"))?;
        let dims = n.dims();
        let idx: Vec<MultiIndex> = data.impulses.iter().map(|&p| MultiIndex::from_linear(p, dims)).collect();
        io::save_index_list(&idx, out.join("impulses.idx"))?;
        if let Some(c) = &data.clean {
            rows.push(("psnr_input".to_string(), metrics::psnr(n.values(), c.values(), cfg.data.peak)?));
        }
    }
    Ok(rows)
}

fn train_verb(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<(String, f64)>> {
    let data = load_dataset(cfg, Task::Train)?;
    let observed = match (&data.train, &data.noisy) {
        (Some(t), _) => t.clone(),
        (None, Some(n)) => SparseTensor::from_dense(n),
        (None, None) => return Err(Error::Config("no training observations".into())),
    };
    let ranks = cfg.model.rank_list();
    let mut rows = Vec::new();
    for &rank in &ranks {
        let (_, trace) = fit(cfg, &observed, rank, out, &suffix(&ranks, rank), None)?;
        if let Some(l) = trace.last() {
            rows.push((metric_name("final_loss", &ranks, rank), *l));
        }
    }
    Ok(rows)
}

fn complete_verb(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<(String, f64)>> {
    let data = load_dataset(cfg, Task::Complete)?;
    let train_set = data.training()?;
    let test = data.test.as_ref().ok_or_else(|| Error::Config("no held-out entries to complete".into()))?;
    let queries = queries_of(test, &(0..test.len()).collect::<Vec<_>>());
    let init = initial_values(&queries, train_set);
    let truth = test.values();
    let ranks = cfg.model.rank_list();
    let mut rows = Vec::new();
    for &rank in &ranks {
        let tag = suffix(&ranks, rank);
        let (model, _) = fit(cfg, train_set, rank, out, &tag, None)?;
        let res = complete(&model, &queries, &init, &cfg.sampler(&model.spec)?, cfg.workers)?;
        io::save_coo(&test.with_values(&res.values)?, out.join(format!("pred{tag}.coo")))?;
        if !res.failures.is_empty() {
            let mut s = String::new();
            for (i, msg) in &res.failures {
                let _ = writeln!(s, "{} {msg}", queries[*i].index);
            }
            fs::write(out.join(format!("failures{tag}.txt")), s)?;
        }
        rows.push((metric_name("rmse", &ranks, rank), metrics::rmse(&res.values, &truth)?));
        rows.push((metric_name("mae", &ranks, rank), metrics::mae(&res.values, &truth)?));
        if let Some(clean) = &data.clean {
            let mut recon = clean.clone();
            for e in train_set.entries() {
                recon.set(&e.index, e.value)?;
            }
            for (e, v) in test.entries().iter().zip(&res.values) {
                recon.set(&e.index, *v)?;
            }
            io::save_dense(&recon, out.join(format!("recon{tag}.dense")))?;
            let peak = cfg.data.peak;
            rows.push((metric_name("psnr", &ranks, rank), metrics::psnr(recon.values(), clean.values(), peak)?));
            if let Ok(s) = metrics::ssim(&recon, clean, peak) {
                rows.push((metric_name("ssim", &ranks, rank), s));
            }
            rows.push((metric_name("nrmse", &ranks, rank), metrics::nrmse(recon.values(), clean.values())?));
        }
        rows.push((metric_name("failures", &ranks, rank), res.failures.len() as f64));
    }
    Ok(rows)
}

fn denoise_verb(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<(String, f64)>> {
    let data = load_dataset(cfg, Task::Denoise)?;
    let noisy = data.noisy.as_ref().ok_or_else(|| Error::Config("no noisy observation".into()))?;
    let observed = SparseTensor::from_dense(noisy);
    let rank = cfg.model.rank_list()[0];
    let epochs = cfg.train.epochs.unwrap_or(0);
    let mut model = match &cfg.model.checkpoint {
        Some(dir) => load_model(dir)?,
        None => EnergyModel::new(cfg.model_spec(noisy.dims(), rank, &observed)?)?,
    };
    let bcd = BcdConfig {
        iterations: cfg.denoise.iterations,
        lambda_s: cfg.denoise.lambda_s,
        pretrain: if cfg.model.checkpoint.is_some() { None } else { Some(cfg.train_config(epochs, &model.spec)?) },
        retrain: cfg.train_config(cfg.denoise.retrain_epochs.unwrap_or(epochs), &model.spec)?,
        sampler: cfg.sampler(&model.spec)?,
        workers: cfg.workers,
    };
    let peak = cfg.data.peak;
    let mut log = String::from("iteration,rmse,psnr\n");
    let clean = data.clean.as_ref();
    let mut log_err = None;
    let result = denoise_bcd(&observed, &mut model, &bcd, |state| {
        if let Some(c) = clean {
            match (metrics::rmse(&state.x, c.values()), metrics::psnr(&state.x, c.values(), peak)) {
                (Ok(r), Ok(p)) => {
                    let _ = writeln!(log, "{},{r},{p}", state.iteration);
                }
                (Err(e), _) | (_, Err(e)) => log_err = Some(e),
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    save_model(&out.join("model"), &model)?;
    write_loss_trace(out.join("loss.csv"), &result.losses)?;
    io::save_dense(&result.clean, out.join("clean_estimate.dense"))?;
    io::save_dense(&result.sparse, out.join("sparse_estimate.dense"))?;
    let mut rows = Vec::new();
    if let Some(c) = clean {
        fs::write(out.join("iterations.csv"), log)?;
        rows.push(("rmse".into(), metrics::rmse(result.clean.values(), c.values())?));
        rows.push(("rmse_input".into(), metrics::rmse(noisy.values(), c.values())?));
        rows.push(("psnr".into(), metrics::psnr(result.clean.values(), c.values(), peak)?));
        rows.push(("psnr_input".into(), metrics::psnr(noisy.values(), c.values(), peak)?));
        if let Ok(s) = metrics::ssim(&result.clean, c, peak) {
            rows.push(("ssim".into(), s));
        }
        rows.push(("nrmse".into(), metrics::nrmse(result.clean.values(), c.values())?));
    }
    rows.push(("failures".into(), result.state.failures.len() as f64));
    Ok(rows)
}

enum Loaded {
    Dense(DenseTensor),
    Sparse(SparseTensor),
}

fn load_any(path: &Path) -> Result<Loaded> {
    let head = {
        use std::io::Read;
        let mut buf = [0u8; 4];
        let mut f = fs::File::open(path)?;
        let n = f.read(&mut buf)?;
        buf[..n].to_vec()
    };
    if head == io::DENSE_MAGIC {
        Ok(Loaded::Dense(io::load_dense(path)?))
    } else {
        Ok(Loaded::Sparse(io::load_coo(path)?))
    }
}

type Key = (MultiIndex, Option<u64>);

fn sparse_map(t: &SparseTensor) -> Result<HashMap<Key, f64>> {
    let mut m = HashMap::new();
    for e in t.entries() {
        if m.insert((e.index.clone(), e.time.map(f64::to_bits)), e.value).is_some() {
            return Err(Error::Argument(format!("repeated entry {} in an evaluated file", e.index)));
        }
    }
    Ok(m)
}

/// Metric rows for a prediction against a reference.
pub fn evaluate(pred: &Path, truth: &Path, mask: Option<&Path>, names: Option<&[String]>, peak: f64) -> Result<Vec<(String, f64)>> {
    let mask = mask.map(io::load_index_list).transpose()?;
    let (p, t, images) = match (load_any(pred)?, load_any(truth)?) {
        (Loaded::Dense(p), Loaded::Dense(t)) => {
            if p.dims() != t.dims() {
                return Err(Error::Argument(format!("shape mismatch: {:?} vs {:?}", p.dims(), t.dims())));
            }
            match &mask {
                Some(m) => {
                    let pv = m.iter().map(|i| p.get(i)).collect::<Result<Vec<_>>>()?;
                    let tv = m.iter().map(|i| t.get(i)).collect::<Result<Vec<_>>>()?;
                    (pv, tv, None)
                }
                None => (p.values().to_vec(), t.values().to_vec(), Some((p, t))),
            }
        }
        (Loaded::Sparse(p), Loaded::Sparse(t)) => {
            if p.dims() != t.dims() {
                return Err(Error::Argument(format!("shape mismatch: {:?} vs {:?}", p.dims(), t.dims())));
            }
            let pm = sparse_map(&p)?;
            let keep: Option<std::collections::HashSet<&MultiIndex>> = mask.as_ref().map(|m| m.iter().collect());
            let mut pv = Vec::new();
            let mut tv = Vec::new();
            for e in t.entries() {
                if keep.as_ref().is_some_and(|k| !k.contains(&e.index)) {
                    continue;
                }
                let key = (e.index.clone(), e.time.map(f64::to_bits));
                let v = pm.get(&key).ok_or_else(|| Error::Argument(format!("prediction has no value at {}", e.index)))?;
                pv.push(*v);
                tv.push(e.value);
            }
            (pv, tv, None)
        }
        _ => return Err(Error::Argument("prediction and reference must share a format".into())),
    };
    let image_ok = images.as_ref().is_some_and(|(_, t)| matches!(t.dims(), [h, w] | [h, w, _] if *h >= 11 && *w >= 11));
    let default: Vec<String> = ["rmse", "mae", "psnr", "ssim", "nrmse"]
        .iter()
        .filter(|n| **n != "ssim" || image_ok)
        .map(|n| n.to_string())
        .collect();
    let names = names.map(|n| n.to_vec()).unwrap_or(default);
    let mut rows = Vec::new();
    for n in &names {
        let v = match n.as_str() {
            "rmse" => metrics::rmse(&p, &t)?,
            "mae" => metrics::mae(&p, &t)?,
            "psnr" => metrics::psnr(&p, &t, peak)?,
            "nrmse" => metrics::nrmse(&p, &t)?,
            "ssim" => {
                let (a, b) = images.as_ref().ok_or_else(|| Error::Argument("ssim needs unmasked dense images".into()))?;
                metrics::ssim(a, b, peak)?
            }
            other => return Err(Error::Argument(format!("unknown metric `{other}`"))),
        };
        rows.push((n.clone(), v));
    }
    Ok(rows)
}

fn eval_verb(cfg: &ExperimentConfig) -> Result<Vec<(String, f64)>> {
    let e = &cfg.eval;
    evaluate(
        e.pred.as_deref().expect("validated"),
        e.truth.as_deref().expect("validated"),
        e.mask.as_deref(),
        e.metrics.as_deref(),
        cfg.data.peak,
    )
}

fn plot_verb(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<(String, f64)>> {
    let data = if cfg.data.source.is_some() { Some(load_dataset(cfg, Task::Plot)?) } else { None };
    let model = match &cfg.model.checkpoint {
        Some(dir) => load_model(dir)?,
        None => {
            let d = data.as_ref().ok_or_else(|| Error::Config("data.source: required to train before plotting".into()))?;
            fit(cfg, d.training()?, cfg.model.rank_list()[0], out, "", None)?.0
        }
    };
    let entry = MultiIndex::new(cfg.plot.entry.clone().expect("validated"));
    entry.check(model.dims())?;
    let query = Query { index: entry.clone(), time: cfg.plot.time, jitter: None };
    let samples: Vec<f64> = data
        .as_ref()
        .and_then(|d| d.train.as_ref())
        .map(|t| t.entries().iter().filter(|e| e.index == entry).map(|e| e.value).collect())
        .unwrap_or_default();
    let (dlo, dhi) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let pad = if samples.is_empty() { 0.0 } else { 0.1 * (dhi - dlo).max(1e-3) };
    let lo = cfg.plot.lo.unwrap_or(if samples.is_empty() { 0.0 } else { dlo - pad });
    let hi = cfg.plot.hi.unwrap_or(if samples.is_empty() { 1.0 } else { dhi + pad });
    let grid = GridConfig::new(lo, hi, cfg.plot.points)?;
    let truth: Option<Vec<(f64, f64)>> = match data.as_ref().and_then(|d| d.sim.as_ref()) {
        Some((z, law)) => {
            let m = datagen::cp_value(z, &entry)?;
            Some(grid.values().into_iter().map(|x| (x, datagen::sim_density(*law, m, x))).collect())
        }
        None => None,
    };
    let density = plot_density(&model, &query, &grid, &samples, truth.as_deref(), out)?;
    let mut rows = vec![("modes".to_string(), metrics::local_maxima(&density.iter().map(|p| p.1).collect::<Vec<_>>()) as f64)];
    if let Some(t) = &truth {
        let p: Vec<f64> = density.iter().map(|d| d.1).collect();
        let q: Vec<f64> = t.iter().map(|d| d.1).collect();
        rows.push(("tv_distance".to_string(), metrics::tv_distance(&p, &q, grid.hi - grid.lo)?));
    }
    Ok(rows)
}
