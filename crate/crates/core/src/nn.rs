//! Dense layers, Fourier features, Glorot initialization, Adam and parameter
//! checkpoints.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Prim, Tape, Var};
use crate::error::{Error, Result};
use crate::io::{read_dense_record, write_dense};
use crate::tensor::DenseTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Softplus,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Dual) -> Result<Dual> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Softplus => tape.record(Prim::Softplus, &[x]),
            Activation::Tanh => tape.record(Prim::Tanh, &[x]),
        }
    }
}

/// Affine map `x Wᵀ + b` followed by an activation. `W` is `out x in`, `b` is `1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// A stack of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Shape of an [`Mlp`]: layer sizes `[in, h1, ..., out]` and one activation per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpShape {
    pub sizes: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpShape {
    /// Hidden layers share `hidden`; the last layer uses `output`.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        let n = sizes.len().saturating_sub(1);
        let activations = (0..n).map(|k| if k + 1 == n { output } else { hidden }).collect();
        Self { sizes: sizes.to_vec(), activations }
    }
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("an MLP needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.dim() != (1, l.out_dim()) {
                return Err(Error::Argument(format!("layer {k}: bias shape {:?}", l.bias.dim())));
            }
            if k > 0 && layers[k - 1].out_dim() != l.in_dim() {
                return Err(Error::Argument(format!(
                    "layer {k} expects {} inputs, previous layer gives {}",
                    l.in_dim(),
                    layers[k - 1].out_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights, zero biases, deterministic in `rng`.
    pub fn glorot<R: Rng>(shape: &MlpShape, rng: &mut R) -> Result<Self> {
        if shape.sizes.len() < 2 || shape.sizes.iter().any(|&s| s == 0) {
            return Err(Error::Argument(format!("bad layer sizes {:?}", shape.sizes)));
        }
        if shape.activations.len() != shape.sizes.len() - 1 {
            return Err(Error::Argument("one activation per layer required".into()));
        }
        let layers = shape
            .sizes
            .windows(2)
            .zip(&shape.activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-limit..limit));
                Dense { weight, bias: Array2::zeros((1, fan_out)), activation }
            })
            .collect();
        Self::new(layers)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Number of parameter tensors (two per layer).
    pub fn tensor_count(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Parameter leaves on `tape`, ordered `[W0, b0, W1, b1, ...]`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], input: Dual) -> Result<Dual> {
        if params.len() != self.tensor_count() {
            return Err(Error::Argument(format!(
                "expected {} bound tensors, got {}",
                self.tensor_count(),
                params.len()
            )));
        }
        let cols = tape.shape(input.value).1;
        if cols != self.in_dim() {
            return Err(Error::Argument(format!("MLP expects {} inputs, got {cols}", self.in_dim())));
        }
        let mut h = input;
        for (k, layer) in self.layers.iter().enumerate() {
            let pre = tape.dual_matmul_t(h, params[2 * k])?;
            let pre = tape.dual_add_const(pre, params[2 * k + 1])?;
            h = layer.activation.apply(tape, pre)?;
        }
        Ok(h)
    }
}

/// Free-function form of [`Mlp::forward`].
pub fn mlp_forward(tape: &mut Tape, mlp: &Mlp, params: &[Var], input: Dual) -> Result<Dual> {
    mlp.forward(tape, params, input)
}

/// Glorot-initialized MLP from a fixed seed.
pub fn init_params(shape: &MlpShape, seed: u64) -> Result<Mlp> {
    Mlp::glorot(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Random Fourier features `(sin(2π·scale·c·Bᵀ), cos(2π·scale·c·Bᵀ))`.
///
/// `B` is `m x k` for `k` input coordinates; output width is `2m`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierEncoder {
    pub frequencies: Array2<f64>,
    pub scale: f64,
    pub trainable: bool,
}

impl FourierEncoder {
    pub fn new(frequencies: Array2<f64>, scale: f64, trainable: bool) -> Result<Self> {
        if frequencies.nrows() == 0 || frequencies.ncols() == 0 {
            return Err(Error::Argument("empty frequency matrix".into()));
        }
        if !(scale > 0.0) {
            return Err(Error::Argument(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { frequencies, scale, trainable })
    }

    /// Frequencies drawn standard normal; `scale` sets their spread.
    pub fn gaussian<R: Rng>(features: usize, coords: usize, scale: f64, trainable: bool, rng: &mut R) -> Result<Self> {
        let b = Array2::from_shape_simple_fn((features, coords), || StandardNormal.sample(rng));
        Self::new(b, scale, trainable)
    }

    pub fn in_dim(&self) -> usize {
        self.frequencies.ncols()
    }

    pub fn out_dim(&self) -> usize {
        2 * self.frequencies.nrows()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Var {
        if trainable && self.trainable {
            tape.param(self.frequencies.clone())
        } else {
            tape.constant(self.frequencies.clone())
        }
    }

    pub fn encode(&self, tape: &mut Tape, frequencies: Var, coords: Var) -> Result<Var> {
        let cols = tape.shape(coords).1;
        if cols != self.in_dim() {
            return Err(Error::Argument(format!("encoder expects {} coordinates, got {cols}", self.in_dim())));
        }
        let proj = tape.matmul_t(coords, frequencies)?;
        let proj = tape.scale(proj, 2.0 * PI * self.scale)?;
        let s = tape.sin(proj)?;
        let c = tape.cos(proj)?;
        tape.concat(&[s, c])
    }
}

/// Free-function form of [`FourierEncoder::encode`] on plain coordinates.
pub fn fourier_encode(enc: &FourierEncoder, coords: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let b = enc.bind(&mut tape, false);
    let c = tape.constant(Array2::from_shape_vec((1, coords.len()), coords.to_vec()).expect("row"));
    let out = enc.encode(&mut tape, b, c)?;
    Ok(tape.value(out).iter().copied().collect())
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. `rows[k] = Some(list)` restricts tensor `k` to the listed rows;
    /// the other rows keep both their values and their moment estimates.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>], rows: &[Option<Vec<usize>>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Optimizer(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dim() != g.dim() || p.dim() != self.m[k].dim() {
                return Err(Error::Optimizer(format!("tensor {k}: shape mismatch")));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Optimizer(format!("tensor {k}: non-finite gradient, step refused")));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, eps) = (self.lr, self.eps);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            let mut update_row = |r: usize| {
                let mut pr = p.row_mut(r);
                let gr = g.row(r);
                let mut mr = m.row_mut(r);
                let mut vr = v.row_mut(r);
                for j in 0..gr.len() {
                    mr[j] = b1 * mr[j] + (1.0 - b1) * gr[j];
                    vr[j] = b2 * vr[j] + (1.0 - b2) * gr[j] * gr[j];
                    let mhat = mr[j] / c1;
                    let vhat = vr[j] / c2;
                    pr[j] -= lr * mhat / (vhat.sqrt() + eps);
                }
            };
            match rows.get(k).and_then(|r| r.as_ref()) {
                Some(list) => list.iter().for_each(|&r| update_row(r)),
                None => (0..g.nrows()).for_each(&mut update_row),
            }
        }
        Ok(())
    }
}

/// Writes named tensors as consecutive dense records plus a `name rows cols` manifest.
pub fn save_checkpoint(dir: impl AsRef<Path>, tensors: &[(String, Array2<f64>)]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut bin = BufWriter::new(fs::File::create(dir.join("params.bin"))?);
    let mut manifest = BufWriter::new(fs::File::create(dir.join("params.manifest"))?);
    for (name, t) in tensors {
        let dense = DenseTensor::new(vec![t.nrows(), t.ncols()], t.iter().copied().collect())?;
        write_dense(&dense, &mut bin)?;
        writeln!(manifest, "{name} {} {}", t.nrows(), t.ncols())?;
    }
    bin.flush()?;
    manifest.flush()?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Vec<(String, Array2<f64>)>> {
    let dir = dir.as_ref();
    let manifest = fs::read_to_string(dir.join("params.manifest"))?;
    let mut bin = BufReader::new(fs::File::open(dir.join("params.bin"))?);
    let mut out = Vec::new();
    for line in manifest.lines().filter(|l| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let name = fields
            .first()
            .ok_or_else(|| Error::Format("empty manifest line".into()))?
            .to_string();
        let shape: Vec<usize> = fields[1..]
            .iter()
            .map(|f| f.parse().map_err(|_| Error::Format(format!("bad shape in `{line}`"))))
            .collect::<Result<_>>()?;
        let record = read_dense_record(&mut bin)?
            .ok_or_else(|| Error::Format(format!("missing record for `{name}`")))?;
        if record.dims() != shape.as_slice() || shape.len() != 2 {
            return Err(Error::Format(format!("record for `{name}` has dims {:?}", record.dims())));
        }
        let arr = Array2::from_shape_vec((shape[0], shape[1]), record.values().to_vec())
            .map_err(|e| Error::Format(e.to_string()))?;
        out.push((name, arr));
    }
    Ok(out)
}
