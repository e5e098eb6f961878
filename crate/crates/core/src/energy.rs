//! Energy networks `E(x, z[, t])` over (entry value, latent factor) pairs and
//! their input derivative, the score.
//!
//! Three variants share one interface:
//!
//! * `tabular`: `z` is gathered from learnable per-mode factor tables;
//! * `temporal`: as tabular, plus a Fourier-feature encoding of a timestamp;
//! * `implicit`: `z` is produced from the normalized index coordinates by a
//!   Fourier-feature encoder and a linear projection.
//!
//! The value `x` goes through `value_encoder`, `z` through `factor_encoder`,
//! the encodings are fused (concatenated or summed) and the `head` maps the
//! fused features to a scalar energy.

use std::ops::Range;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Prim, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, FourierEncoder, Mlp, MlpShape};
use crate::rng;
use crate::tensor::{FactorSet, MultiIndex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Tabular,
    Temporal,
    Implicit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    #[default]
    Concat,
    Sum,
}

fn default_time_features() -> usize {
    32
}
fn default_scale() -> f64 {
    10.0
}
fn default_factor_std() -> f64 {
    0.5
}
fn default_value_scale() -> f64 {
    1.0
}

/// Architecture description; enough to rebuild a model before loading a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub dims: Vec<usize>,
    pub rank: usize,
    pub width: usize,
    #[serde(default)]
    pub fusion: Fusion,
    #[serde(default = "default_time_features")]
    pub time_features: usize,
    #[serde(default = "default_scale")]
    pub time_scale: f64,
    #[serde(default = "default_scale")]
    pub coord_scale: f64,
    #[serde(default = "default_factor_std")]
    pub factor_std: f64,
    /// The value encoder sees `(x - value_shift) * value_scale`.
    #[serde(default)]
    pub value_shift: f64,
    #[serde(default = "default_value_scale")]
    pub value_scale: f64,
    #[serde(default)]
    pub trainable_frequencies: bool,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    /// Length of one network input unit in data units.
    pub fn value_unit(&self) -> f64 {
        1.0 / self.value_scale
    }

    /// Maps a network-input coordinate back to data units.
    pub fn to_data(&self, u: f64) -> f64 {
        self.value_shift + u / self.value_scale
    }

    pub fn new(variant: Variant, dims: Vec<usize>, rank: usize, width: usize) -> Self {
        Self {
            variant,
            dims,
            rank,
            width,
            fusion: Fusion::Concat,
            time_features: default_time_features(),
            time_scale: default_scale(),
            coord_scale: default_scale(),
            factor_std: default_factor_std(),
            value_shift: 0.0,
            value_scale: default_value_scale(),
            trainable_frequencies: false,
            seed: 0,
        }
    }
}

/// Fourier features followed by a dense projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub fourier: FourierEncoder,
    pub projection: Mlp,
}

/// How a stored tensor takes part in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    /// Dense parameter updated every step.
    Dense,
    /// Fixed buffer (untrained Fourier frequencies).
    Frozen,
    /// Factor table; only rows seen in a batch are updated.
    FactorRows,
}

/// One conditioning row: the entry index, its timestamp for temporal models,
/// and an optional offset in normalized coordinate space (implicit models only).
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub index: MultiIndex,
    pub time: Option<f64>,
    pub jitter: Option<Vec<f64>>,
}

impl Query {
    pub fn new(index: impl Into<MultiIndex>) -> Self {
        Self { index: index.into(), time: None, jitter: None }
    }

    pub fn timed(index: impl Into<MultiIndex>, time: f64) -> Self {
        Self { index: index.into(), time: Some(time), jitter: None }
    }
}

/// Anything that can assign an energy to a batch of values given conditioning rows.
///
/// `energy` receives `x` as a `rows x 1` column whose row `k` belongs to row `k`
/// of the context and returns a `rows x 1` column of energies.
pub trait EnergyFunction: Sync {
    type Bound;
    type Context;

    /// Places parameters on `tape`, as gradient leaves when `trainable`.
    fn bind(&self, tape: &mut Tape, trainable: bool) -> Self::Bound;

    fn condition(&self, tape: &mut Tape, bound: &Self::Bound, queries: &[Query]) -> Result<Self::Context>;

    /// Context rows picked by `rows` (repeats allowed).
    fn select(&self, tape: &mut Tape, ctx: &Self::Context, rows: &[usize]) -> Result<Self::Context>;

    fn energy(&self, tape: &mut Tape, bound: &Self::Bound, ctx: &Self::Context, x: Dual) -> Result<Dual>;

    /// Whether [`Query::jitter`] is understood.
    fn supports_jitter(&self) -> bool {
        false
    }
}

/// `∂E/∂x` at the column `x`, as a node that stays differentiable in the parameters.
pub fn score<E: EnergyFunction>(
    model: &E,
    tape: &mut Tape,
    bound: &E::Bound,
    ctx: &E::Context,
    x: Var,
) -> Result<Var> {
    let seeded = tape.seed(x)?;
    let e = model.energy(tape, bound, ctx, seeded)?;
    match e.tangent {
        Some(t) => Ok(t),
        None => {
            let shape = tape.shape(x);
            Ok(tape.constant(Array2::zeros(shape)))
        }
    }
}

fn check_rows(queries: &[Query], xs: &[f64]) -> Result<()> {
    if queries.len() != xs.len() {
        return Err(Error::Argument(format!("{} queries but {} values", queries.len(), xs.len())));
    }
    Ok(())
}

/// Plain energies, one per (query, value) pair.
pub fn energies<E: EnergyFunction>(model: &E, queries: &[Query], xs: &[f64]) -> Result<Vec<f64>> {
    check_rows(queries, xs)?;
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let ctx = model.condition(&mut tape, &bound, queries)?;
    let x = tape.column(xs);
    let e = model.energy(&mut tape, &bound, &ctx, Dual::constant(x))?;
    Ok(tape.value(e.value).iter().copied().collect())
}

/// Plain scores `∂E/∂x`, one per (query, value) pair.
pub fn scores<E: EnergyFunction>(model: &E, queries: &[Query], xs: &[f64]) -> Result<Vec<f64>> {
    check_rows(queries, xs)?;
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let ctx = model.condition(&mut tape, &bound, queries)?;
    let x = tape.column(xs);
    let s = score(model, &mut tape, &bound, &ctx, x)?;
    Ok(tape.value(s).iter().copied().collect())
}

/// The energy network.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModel {
    pub spec: ModelSpec,
    pub value_encoder: Mlp,
    pub factor_encoder: Mlp,
    pub time_encoder: Option<Encoder>,
    pub coord_encoder: Option<Encoder>,
    pub head: Mlp,
    pub factors: Option<FactorSet>,
}

/// Parameter leaves of an [`EnergyModel`] on one tape.
pub struct BoundModel {
    pub vars: Vec<Var>,
    layout: Layout,
}

#[derive(Clone, Debug)]
struct Layout {
    value: Range<usize>,
    factor: Range<usize>,
    time: Option<(usize, Range<usize>)>,
    coord: Option<(usize, Range<usize>)>,
    head: Range<usize>,
    tables: Range<usize>,
}

/// Conditioning computed once per batch and reused for every value of `x`.
#[derive(Clone, Debug)]
pub struct ModelContext {
    /// Concat: head pre-activation from the non-value parts (bias included).
    /// Sum: the summed non-value encodings.
    pre: Var,
    /// Concat only: the head weight columns that multiply the value encoding.
    value_weight: Option<Var>,
}

fn two_layer(input: usize, width: usize) -> MlpShape {
    MlpShape::new(&[input, width, width], Activation::Softplus, Activation::Softplus)
}

impl EnergyModel {
    /// Fresh model with Glorot-initialized networks.
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let d = spec.dims.len();
        if d == 0 || spec.dims.iter().any(|&n| n == 0) {
            return Err(Error::Parameter(format!("bad dims {:?}", spec.dims)));
        }
        if spec.rank == 0 || spec.width == 0 {
            return Err(Error::Parameter("rank and width must be positive".into()));
        }
        let mut rng = rng::stream(spec.seed, "model-init", &[]);
        let w = spec.width;
        let zdim = d * spec.rank;
        let value_encoder = Mlp::glorot(&two_layer(1, w), &mut rng)?;
        let factor_encoder = Mlp::glorot(&two_layer(zdim, w), &mut rng)?;
        let time_encoder = match spec.variant {
            Variant::Temporal => {
                let fourier = FourierEncoder::gaussian(
                    spec.time_features.max(1),
                    1,
                    spec.time_scale,
                    spec.trainable_frequencies,
                    &mut rng,
                )?;
                let projection = Mlp::glorot(
                    &MlpShape::new(&[fourier.out_dim(), w], Activation::Softplus, Activation::Softplus),
                    &mut rng,
                )?;
                Some(Encoder { fourier, projection })
            }
            _ => None,
        };
        let coord_encoder = match spec.variant {
            Variant::Implicit => {
                let fourier = FourierEncoder::gaussian(
                    (spec.rank / 2).max(1),
                    d,
                    spec.coord_scale,
                    spec.trainable_frequencies,
                    &mut rng,
                )?;
                let projection = Mlp::glorot(
                    &MlpShape::new(&[fourier.out_dim(), zdim], Activation::Identity, Activation::Identity),
                    &mut rng,
                )?;
                Some(Encoder { fourier, projection })
            }
            _ => None,
        };
        let fused = match spec.fusion {
            Fusion::Concat => w * if time_encoder.is_some() { 3 } else { 2 },
            Fusion::Sum => w,
        };
        let head = Mlp::glorot(&MlpShape::new(&[fused, w, w, 1], Activation::Softplus, Activation::Identity), &mut rng)?;
        let factors = match spec.variant {
            Variant::Implicit => None,
            _ => {
                let normal = Normal::new(0.0, spec.factor_std)
                    .map_err(|e| Error::Parameter(format!("factor_std: {e}")))?;
                let tables = spec
                    .dims
                    .iter()
                    .map(|&n| Array2::from_shape_simple_fn((n, spec.rank), || normal.sample(&mut rng)))
                    .collect();
                Some(FactorSet::new(tables)?)
            }
        };
        let model = Self { spec, value_encoder, factor_encoder, time_encoder, coord_encoder, head, factors };
        model.validate()?;
        Ok(model)
    }

    /// Checks that the parts fit together.
    pub fn validate(&self) -> Result<()> {
        let d = self.spec.dims.len();
        let zdim = d * self.spec.rank;
        let bad = |m: String| Err(Error::Config(m));
        if self.value_encoder.in_dim() != 1 {
            return bad("value encoder must take one input".into());
        }
        if self.factor_encoder.in_dim() != zdim {
            return bad(format!("factor encoder takes {} inputs, need {zdim}", self.factor_encoder.in_dim()));
        }
        if self.head.out_dim() != 1 {
            return bad("head must produce a scalar".into());
        }
        if !(self.spec.value_scale > 0.0 && self.spec.value_scale.is_finite() && self.spec.value_shift.is_finite()) {
            return bad("value_scale must be positive and value_shift finite".into());
        }
        match (self.spec.variant, &self.factors, &self.coord_encoder) {
            (Variant::Implicit, None, Some(enc)) => {
                if enc.fourier.in_dim() != d || enc.projection.out_dim() != zdim {
                    return bad("coordinate encoder shape mismatch".into());
                }
            }
            (Variant::Tabular | Variant::Temporal, Some(f), None) => {
                if f.dims() != self.spec.dims || f.rank() != self.spec.rank {
                    return bad("factor tables do not match dims/rank".into());
                }
            }
            _ => return bad("exactly one factor source must be active".into()),
        }
        if (self.spec.variant == Variant::Temporal) != self.time_encoder.is_some() {
            return bad("time encoder present iff temporal".into());
        }
        let vw = self.value_encoder.out_dim();
        let fw = self.factor_encoder.out_dim();
        let tw = self.time_encoder.as_ref().map(|t| t.projection.out_dim());
        if let Some(t) = &self.time_encoder {
            if t.projection.in_dim() != t.fourier.out_dim() {
                return bad("time projection shape mismatch".into());
            }
        }
        let fused = match self.spec.fusion {
            Fusion::Concat => vw + fw + tw.unwrap_or(0),
            Fusion::Sum => {
                if vw != fw || tw.is_some_and(|t| t != vw) {
                    return bad("sum fusion needs equal encoder widths".into());
                }
                vw
            }
        };
        if self.head.in_dim() != fused {
            return bad(format!("head takes {} inputs, fusion gives {fused}", self.head.in_dim()));
        }
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn dims(&self) -> &[usize] {
        &self.spec.dims
    }

    fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let value = take(self.value_encoder.tensor_count());
        let factor = take(self.factor_encoder.tensor_count());
        let time = self.time_encoder.as_ref().map(|e| (take(1).start, take(e.projection.tensor_count())));
        let coord = self.coord_encoder.as_ref().map(|e| (take(1).start, take(e.projection.tensor_count())));
        let head = take(self.head.tensor_count());
        let tables = take(self.factors.as_ref().map_or(0, |f| f.order()));
        Layout { value, factor, time, coord, head, tables }
    }

    /// Every stored tensor with its name and role, in binding order.
    pub fn named_tensors(&self) -> Vec<(String, TensorKind, &Array2<f64>)> {
        fn push_mlp<'a>(out: &mut Vec<(String, TensorKind, &'a Array2<f64>)>, prefix: &str, m: &'a Mlp) {
            for (k, l) in m.layers.iter().enumerate() {
                out.push((format!("{prefix}.{k}.weight"), TensorKind::Dense, &l.weight));
                out.push((format!("{prefix}.{k}.bias"), TensorKind::Dense, &l.bias));
            }
        }
        let mut out = Vec::new();
        push_mlp(&mut out, "value", &self.value_encoder);
        push_mlp(&mut out, "factor", &self.factor_encoder);
        for (name, enc) in [("time", &self.time_encoder), ("coord", &self.coord_encoder)] {
            if let Some(e) = enc {
                let kind = if e.fourier.trainable { TensorKind::Dense } else { TensorKind::Frozen };
                out.push((format!("{name}.frequencies"), kind, &e.fourier.frequencies));
                push_mlp(&mut out, &format!("{name}.projection"), &e.projection);
            }
        }
        push_mlp(&mut out, "head", &self.head);
        if let Some(f) = &self.factors {
            for (d, m) in f.matrices().iter().enumerate() {
                out.push((format!("factors.{d}"), TensorKind::FactorRows, m));
            }
        }
        out
    }

    /// Mutable access to every stored tensor, in binding order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = Vec::new();
        out.extend(self.value_encoder.tensors_mut());
        out.extend(self.factor_encoder.tensors_mut());
        if let Some(e) = &mut self.time_encoder {
            out.push(&mut e.fourier.frequencies);
            out.extend(e.projection.tensors_mut());
        }
        if let Some(e) = &mut self.coord_encoder {
            out.push(&mut e.fourier.frequencies);
            out.extend(e.projection.tensors_mut());
        }
        out.extend(self.head.tensors_mut());
        if let Some(f) = &mut self.factors {
            out.extend(f.matrices_mut().iter_mut());
        }
        out
    }

    /// Overwrites every tensor from `(name, value)` pairs in binding order.
    pub fn load_tensors(&mut self, tensors: Vec<(String, Array2<f64>)>) -> Result<()> {
        let names: Vec<(String, (usize, usize))> =
            self.named_tensors().into_iter().map(|(n, _, t)| (n, t.dim())).collect();
        if names.len() != tensors.len() {
            return Err(Error::Format(format!("checkpoint has {} tensors, model has {}", tensors.len(), names.len())));
        }
        for ((name, dim), (got, t)) in names.iter().zip(&tensors) {
            if name != got || *dim != t.dim() {
                return Err(Error::Format(format!("checkpoint tensor `{got}` {:?} does not match `{name}` {dim:?}", t.dim())));
            }
        }
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(tensors) {
            *dst = src;
        }
        Ok(())
    }

    /// Latent factor for one index: gathered table rows, or the coordinate encoding.
    pub fn factor_of(&self, index: &MultiIndex) -> Result<Vec<f64>> {
        index.check(&self.spec.dims)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let z = self.latent(&mut tape, &bound, &[Query::new(index.clone())])?;
        Ok(tape.value(z).iter().copied().collect())
    }

    /// Energy of a single value against an explicit factor vector.
    pub fn energy_at(&self, x: f64, z: &[f64], t: Option<f64>) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let zv = tape.constant(Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row"));
        let tv = t.map(|t| tape.scalar_const(t));
        let xv = tape.scalar_const(x);
        let e = self.energy_from_factor(&mut tape, &bound, Dual::constant(xv), zv, tv)?;
        Ok(tape.scalar(e.value))
    }

    /// `E(x, z[, t])` for explicit factor rows `z` (`rows x D·R`).
    pub fn energy_from_factor(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        x: Dual,
        z: Var,
        t: Option<Var>,
    ) -> Result<Dual> {
        let ctx = self.context_from_factor(tape, bound, z, t)?;
        self.energy(tape, bound, &ctx, x)
    }

    fn latent(&self, tape: &mut Tape, bound: &BoundModel, queries: &[Query]) -> Result<Var> {
        let dims = &self.spec.dims;
        for q in queries {
            q.index.check(dims)?;
        }
        match (&self.factors, &self.coord_encoder) {
            (Some(f), None) => {
                if queries.iter().any(|q| q.jitter.is_some()) {
                    return Err(Error::Config("coordinate jitter needs the implicit variant".into()));
                }
                let mut parts = Vec::with_capacity(f.order());
                for d in 0..f.order() {
                    let rows: Vec<usize> = queries.iter().map(|q| q.index.coords()[d]).collect();
                    parts.push(tape.gather_rows(bound.vars[bound.layout.tables.start + d], &rows)?);
                }
                if parts.len() == 1 {
                    Ok(parts[0])
                } else {
                    tape.concat(&parts)
                }
            }
            (None, Some(enc)) => {
                let d = dims.len();
                let mut coords = Array2::zeros((queries.len(), d));
                for (r, q) in queries.iter().enumerate() {
                    let base = q.index.normalized(dims);
                    if let Some(j) = &q.jitter {
                        if j.len() != d {
                            return Err(Error::Argument(format!("jitter has {} coordinates, need {d}", j.len())));
                        }
                    }
                    for k in 0..d {
                        coords[[r, k]] = base[k] + q.jitter.as_ref().map_or(0.0, |j| j[k]);
                    }
                }
                let coords = tape.constant(coords);
                let (freq, proj) = bound.layout.coord.clone().expect("implicit layout");
                let feats = enc.fourier.encode(tape, bound.vars[freq], coords)?;
                let z = enc.projection.forward(tape, &bound.vars[proj], Dual::constant(feats))?;
                Ok(z.value)
            }
            _ => Err(Error::Config("model has no factor source".into())),
        }
    }

    fn context_from_factor(&self, tape: &mut Tape, bound: &BoundModel, z: Var, t: Option<Var>) -> Result<ModelContext> {
        let l = &bound.layout;
        let zf = self.factor_encoder.forward(tape, &bound.vars[l.factor.clone()], Dual::constant(z))?.value;
        let tf = match (&self.time_encoder, t) {
            (Some(enc), Some(t)) => {
                let (freq, proj) = l.time.clone().expect("temporal layout");
                let feats = enc.fourier.encode(tape, bound.vars[freq], t)?;
                Some(enc.projection.forward(tape, &bound.vars[proj], Dual::constant(feats))?.value)
            }
            (None, None) => None,
            (Some(_), None) => return Err(Error::Argument("temporal model needs timestamps".into())),
            (None, Some(_)) => return Err(Error::Argument("timestamps given to a non-temporal model".into())),
        };
        let head_w = bound.vars[l.head.start];
        let head_b = bound.vars[l.head.start + 1];
        match self.spec.fusion {
            Fusion::Concat => {
                let vw = self.value_encoder.out_dim();
                let fw = self.factor_encoder.out_dim();
                let value_weight = tape.slice_cols(head_w, 0, vw)?;
                let wz = tape.slice_cols(head_w, vw, vw + fw)?;
                let mut pre = tape.matmul_t(zf, wz)?;
                if let Some(tf) = tf {
                    let tw = tape.shape(tf).1;
                    let wt = tape.slice_cols(head_w, vw + fw, vw + fw + tw)?;
                    let tp = tape.matmul_t(tf, wt)?;
                    pre = tape.add(pre, tp)?;
                }
                let pre = tape.add(pre, head_b)?;
                Ok(ModelContext { pre, value_weight: Some(value_weight) })
            }
            Fusion::Sum => {
                let pre = match tf {
                    Some(tf) => tape.add(zf, tf)?,
                    None => zf,
                };
                Ok(ModelContext { pre, value_weight: None })
            }
        }
    }
}

impl EnergyFunction for EnergyModel {
    type Bound = BoundModel;
    type Context = ModelContext;

    fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let vars = self
            .named_tensors()
            .into_iter()
            .map(|(_, kind, t)| match kind {
                TensorKind::Frozen => tape.constant(t.clone()),
                _ if trainable => tape.param(t.clone()),
                _ => tape.constant(t.clone()),
            })
            .collect();
        BoundModel { vars, layout: self.layout() }
    }

    fn condition(&self, tape: &mut Tape, bound: &BoundModel, queries: &[Query]) -> Result<ModelContext> {
        if queries.is_empty() {
            return Err(Error::Argument("no queries".into()));
        }
        let timed = self.spec.variant == Variant::Temporal;
        if queries.iter().any(|q| q.time.is_some() != timed) {
            return Err(Error::Argument(if timed {
                "temporal model needs a timestamp on every query".into()
            } else {
                "timestamps given to a non-temporal model".into()
            }));
        }
        let z = self.latent(tape, bound, queries)?;
        let t = if timed {
            let ts: Vec<f64> = queries.iter().map(|q| q.time.expect("checked")).collect();
            Some(tape.column(&ts))
        } else {
            None
        };
        self.context_from_factor(tape, bound, z, t)
    }

    fn select(&self, tape: &mut Tape, ctx: &ModelContext, rows: &[usize]) -> Result<ModelContext> {
        Ok(ModelContext { pre: tape.gather_rows(ctx.pre, rows)?, value_weight: ctx.value_weight })
    }

    fn energy(&self, tape: &mut Tape, bound: &BoundModel, ctx: &ModelContext, x: Dual) -> Result<Dual> {
        let l = &bound.layout;
        if tape.shape(x.value).1 != 1 {
            return Err(Error::Argument("x must be a column".into()));
        }
        let (shift, k) = (self.spec.value_shift, self.spec.value_scale);
        let x = if shift == 0.0 && k == 1.0 { x } else { tape.dual_affine(x, k, -shift * k)? };
        let xf = self.value_encoder.forward(tape, &bound.vars[l.value.clone()], x)?;
        let head = &bound.vars[l.head.clone()];
        let first = &self.head.layers[0];
        let pre = match ctx.value_weight {
            Some(wx) => {
                let p = tape.dual_matmul_t(xf, wx)?;
                tape.dual_add_const(p, ctx.pre)?
            }
            None => {
                let fused = tape.dual_add_const(xf, ctx.pre)?;
                let p = tape.dual_matmul_t(fused, head[0])?;
                tape.dual_add_const(p, head[1])?
            }
        };
        let mut h = first.activation.apply(tape, pre)?;
        for (k, layer) in self.head.layers.iter().enumerate().skip(1) {
            let p = tape.dual_matmul_t(h, head[2 * k])?;
            let p = tape.dual_add_const(p, head[2 * k + 1])?;
            h = layer.activation.apply(tape, p)?;
        }
        Ok(h)
    }

    fn supports_jitter(&self) -> bool {
        self.spec.variant == Variant::Implicit
    }
}

/// Simple closed-form energies for tests, examples and sampler checks.
pub mod stubs {
    use super::*;

    fn column_of(tape: &mut Tape, rows: usize, v: f64) -> Var {
        tape.constant(Array2::from_elem((rows, 1), v))
    }

    /// `E(x) = curvature · (x - center)² / 2`.
    #[derive(Clone, Copy, Debug, PartialEq)]
    pub struct Quadratic {
        pub center: f64,
        pub curvature: f64,
    }

    impl Quadratic {
        pub fn new(center: f64, curvature: f64) -> Self {
            Self { center, curvature }
        }
    }

    impl EnergyFunction for Quadratic {
        type Bound = ();
        type Context = usize;

        fn bind(&self, _: &mut Tape, _: bool) {}

        fn condition(&self, _: &mut Tape, _: &(), queries: &[Query]) -> Result<usize> {
            Ok(queries.len())
        }

        fn select(&self, _: &mut Tape, _: &usize, rows: &[usize]) -> Result<usize> {
            Ok(rows.len())
        }

        fn energy(&self, tape: &mut Tape, _: &(), rows: &usize, x: Dual) -> Result<Dual> {
            let c = column_of(tape, *rows, self.center);
            let d = tape.record(Prim::Sub, &[x, Dual::constant(c)])?;
            let sq = tape.record(Prim::Mul, &[d, d])?;
            let k = tape.scalar_const(self.curvature / 2.0);
            tape.record(Prim::Mul, &[sq, Dual::constant(k)])
        }

        fn supports_jitter(&self) -> bool {
            true
        }
    }

    /// `E ≡ value`; its score is identically zero.
    #[derive(Clone, Copy, Debug, PartialEq)]
    pub struct Constant(pub f64);

    impl EnergyFunction for Constant {
        type Bound = ();
        type Context = usize;

        fn bind(&self, _: &mut Tape, _: bool) {}

        fn condition(&self, _: &mut Tape, _: &(), queries: &[Query]) -> Result<usize> {
            Ok(queries.len())
        }

        fn select(&self, _: &mut Tape, _: &usize, rows: &[usize]) -> Result<usize> {
            Ok(rows.len())
        }

        fn energy(&self, tape: &mut Tape, _: &(), _rows: &usize, x: Dual) -> Result<Dual> {
            let shape = tape.shape(x.value);
            Ok(Dual::constant(tape.constant(Array2::from_elem(shape, self.0))))
        }

        fn supports_jitter(&self) -> bool {
            true
        }
    }

    /// `E(x) = slope · x`.
    #[derive(Clone, Copy, Debug, PartialEq)]
    pub struct Linear(pub f64);

    impl EnergyFunction for Linear {
        type Bound = ();
        type Context = usize;

        fn bind(&self, _: &mut Tape, _: bool) {}

        fn condition(&self, _: &mut Tape, _: &(), queries: &[Query]) -> Result<usize> {
            Ok(queries.len())
        }

        fn select(&self, _: &mut Tape, _: &usize, rows: &[usize]) -> Result<usize> {
            Ok(rows.len())
        }

        fn energy(&self, tape: &mut Tape, _: &(), _rows: &usize, x: Dual) -> Result<Dual> {
            let k = tape.scalar_const(self.0);
            tape.record(Prim::Mul, &[x, Dual::constant(k)])
        }
    }
}

/// Random model for property tests: small widths, random non-zero parameters.
pub fn random_model<R: Rng>(variant: Variant, dims: Vec<usize>, rank: usize, width: usize, rng: &mut R) -> Result<EnergyModel> {
    let mut spec = ModelSpec::new(variant, dims, rank, width);
    spec.seed = rng.random();
    spec.time_features = 4;
    spec.time_scale = 1.0;
    spec.coord_scale = 1.0;
    let mut model = EnergyModel::new(spec)?;
    for t in model.tensors_mut() {
        t.mapv_inplace(|v| v + 0.1 * rng.random_range(-1.0..1.0));
    }
    Ok(model)
}
