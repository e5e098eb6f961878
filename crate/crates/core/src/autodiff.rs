//! Tape-based reverse-mode differentiation with forward-mode tangents recorded
//! on the same tape.
//!
//! Nodes hold 2-D arrays so a whole batch of entries moves through one node;
//! scalars are `1 x 1`. A [`Dual`] pairs a value node with an optional tangent
//! node. Tangents are built from ordinary tape operations, so a tangent is itself
//! differentiable: running [`Tape::gradients`] from a tangent node yields mixed
//! second derivatives (forward-over-reverse).
//!
//! ```
//! use score_tensor::autodiff::{Tape, Prim};
//!
//! let mut tape = Tape::new();
//! let x = tape.var(2.0);
//! // d/dx x^3 at 2, kept on the tape.
//! let dx = tape
//!     .input_derivative(x, |t, xd| {
//!         let sq = t.record(Prim::Mul, &[xd, xd])?;
//!         t.record(Prim::Mul, &[sq, xd])
//!     })
//!     .unwrap();
//! assert_eq!(tape.scalar(dx), 12.0);
//! assert_eq!(tape.reverse_grad(dx, &[x]).unwrap(), vec![12.0]);
//! ```

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    id: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }
}

/// Value node plus its forward tangent; `None` means an identically zero tangent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dual {
    pub value: Var,
    pub tangent: Option<Var>,
}

impl Dual {
    pub fn constant(value: Var) -> Self {
        Self { value, tangent: None }
    }
}

/// The closed primitive set accepted by [`Tape::record`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Prim {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Pow(f64),
    Exp,
    Ln,
    Sin,
    Cos,
    Tanh,
    Softplus,
    Max,
    Abs,
    Sum,
    Dot,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Max(usize, usize),
    Neg(usize),
    Pow(usize, f64),
    Exp(usize),
    Ln(usize),
    Sin(usize),
    Cos(usize),
    Tanh(usize),
    Softplus(usize),
    Sigmoid(usize),
    Abs(usize),
    Affine(usize, f64),
    Sum(usize),
    SumCols(usize),
    Dot(usize, usize),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
    Gather(usize, Vec<usize>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Append-only node arena; insertion order is a topological order.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

/// Position on a tape, for [`Tape::rewind`].
#[derive(Clone, Copy, Debug)]
pub struct Mark(usize);

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

type Shape = (usize, usize);

fn shape_of(a: &Array2<f64>) -> Shape {
    (a.nrows(), a.ncols())
}

fn broadcast_shape(a: Shape, b: Shape) -> Option<Shape> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

fn zip_broadcast(
    a: &Array2<f64>,
    b: &Array2<f64>,
    shape: Shape,
    f: impl Fn(f64, f64) -> f64,
) -> Array2<f64> {
    let av = a.broadcast(shape).expect("checked broadcast");
    let bv = b.broadcast(shape).expect("checked broadcast");
    Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y))
}

/// Sums `g` down to `shape` along broadcast axes.
fn reduce_to(g: Array2<f64>, shape: Shape) -> Array2<f64> {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

impl Tape {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn mark(&self) -> Mark {
        Mark(self.nodes.len())
    }

    /// Drops every node recorded after `mark`. Handles to dropped nodes become invalid.
    pub fn rewind(&mut self, mark: Mark) {
        self.nodes.truncate(mark.0);
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(Error::Argument(format!("node {} is not on this tape", v.id)));
        }
        Ok(v.id)
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { value, op, needs_grad });
        Var { tape: self.id, id }
    }

    fn push_checked(&mut self, value: Array2<f64>, op: Op, needs_grad: bool, what: &str) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!("{what} produced a non-finite value")));
        }
        Ok(self.push(value, op, needs_grad))
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Scalar leaf that receives gradients.
    pub fn var(&mut self, value: f64) -> Var {
        self.param(Array2::from_elem((1, 1), value))
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_const(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// Column vector constant.
    pub fn column(&mut self, values: &[f64]) -> Var {
        self.constant(Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column shape"))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.id].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        shape_of(&self.nodes[v.id].value)
    }

    /// First element of the node's value.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.id].value[[0, 0]]
    }

    fn grad_flag(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    fn binary(&mut self, a: Var, b: Var, kind: fn(usize, usize) -> Op) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let shape = broadcast_shape(shape_of(va), shape_of(vb)).ok_or_else(|| {
            Error::Argument(format!(
                "shapes {:?} and {:?} do not broadcast",
                shape_of(va),
                shape_of(vb)
            ))
        })?;
        let op = kind(ia, ib);
        let value = match op {
            Op::Add(..) => zip_broadcast(va, vb, shape, |x, y| x + y),
            Op::Sub(..) => zip_broadcast(va, vb, shape, |x, y| x - y),
            Op::Mul(..) => zip_broadcast(va, vb, shape, |x, y| x * y),
            Op::Max(..) => zip_broadcast(va, vb, shape, f64::max),
            Op::Div(..) => {
                if vb.iter().any(|&y| y == 0.0) {
                    return Err(Error::Evaluation("division by zero".into()));
                }
                zip_broadcast(va, vb, shape, |x, y| x / y)
            }
            _ => unreachable!("not a binary op"),
        };
        let g = self.grad_flag(&[ia, ib]);
        self.push_checked(value, op, g, "binary op")
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64, what: &str) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.nodes[ia].value.mapv(f);
        let g = self.grad_flag(&[ia]);
        self.push_checked(value, op, g, what)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div)
    }

    /// Elementwise maximum; ties send the gradient to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Max)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Neg(ia), |x| -x, "neg")
    }

    pub fn pow(&mut self, a: Var, p: f64) -> Result<Var> {
        let ia = self.check(a)?;
        if p.fract() != 0.0 && self.nodes[ia].value.iter().any(|&x| x < 0.0) {
            return Err(Error::Evaluation(format!("negative base with exponent {p}")));
        }
        if p < 0.0 && self.nodes[ia].value.iter().any(|&x| x == 0.0) {
            return Err(Error::Evaluation(format!("zero base with exponent {p}")));
        }
        self.unary(a, Op::Pow(ia, p), |x| x.powf(p), "pow")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Exp(ia), f64::exp, "exp")
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        if self.nodes[ia].value.iter().any(|&x| x <= 0.0) {
            return Err(Error::Evaluation("ln of a non-positive value".into()));
        }
        self.unary(a, Op::Ln(ia), f64::ln, "ln")
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Sin(ia), f64::sin, "sin")
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Cos(ia), f64::cos, "cos")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Tanh(ia), f64::tanh, "tanh")
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Softplus(ia), softplus, "softplus")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Sigmoid(ia), sigmoid, "sigmoid")
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Abs(ia), f64::abs, "abs")
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary(a, Op::Affine(ia, scale), |x| scale * x + shift, "affine")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.affine(a, c, 0.0)
    }

    /// Sum of all elements, as `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = Array2::from_elem((1, 1), self.nodes[ia].value.sum());
        let g = self.grad_flag(&[ia]);
        Ok(self.push(value, Op::Sum(ia), g))
    }

    /// Mean of all elements, as `1 x 1`.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.nodes[self.check(a)?].value.len();
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Per-row sum, `B x n -> B x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.nodes[ia].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        let g = self.grad_flag(&[ia]);
        Ok(self.push(value, Op::SumCols(ia), g))
    }

    /// Sum of elementwise products of equal-shaped nodes, as `1 x 1`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.dim() != vb.dim() {
            return Err(Error::Argument(format!("dot of shapes {:?} and {:?}", va.dim(), vb.dim())));
        }
        let value = Array2::from_elem((1, 1), Zip::from(va).and(vb).fold(0.0, |acc, &x, &y| acc + x * y));
        let g = self.grad_flag(&[ia, ib]);
        Ok(self.push(value, Op::Dot(ia, ib), g))
    }

    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.ncols() != vb.nrows() {
            return Err(Error::Argument(format!("matmul of {:?} and {:?}", va.dim(), vb.dim())));
        }
        let value = va.dot(vb);
        let g = self.grad_flag(&[ia, ib]);
        Ok(self.push(value, Op::MatMul(ia, ib), g))
    }

    /// `a · bᵀ`, the dense-layer product with weights stored `out x in`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.ncols() != vb.ncols() {
            return Err(Error::Argument(format!("matmul_t of {:?} and {:?}", va.dim(), vb.dim())));
        }
        let value = va.dot(&vb.t());
        let g = self.grad_flag(&[ia, ib]);
        Ok(self.push(value, Op::MatMulT(ia, ib), g))
    }

    /// Column-wise concatenation of nodes with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Argument("concat of nothing".into()));
        }
        let ids = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let rows = self.nodes[ids[0]].value.nrows();
        if ids.iter().any(|&i| self.nodes[i].value.nrows() != rows) {
            return Err(Error::Argument("concat parts differ in row count".into()));
        }
        let views: Vec<_> = ids.iter().map(|&i| self.nodes[i].value.view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Argument(e.to_string()))?;
        let g = self.grad_flag(&ids);
        Ok(self.push(value, Op::Concat(ids), g))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        if start >= end || end > v.ncols() {
            return Err(Error::Argument(format!("column slice {start}..{end} of {:?}", v.dim())));
        }
        let value = v.slice(s![.., start..end]).to_owned();
        let g = self.grad_flag(&[ia]);
        Ok(self.push(value, Op::Slice(ia, start), g))
    }

    /// Rows of `a` selected by `rows` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        if let Some(&bad) = rows.iter().find(|&&r| r >= v.nrows()) {
            return Err(Error::Index(format!("row {bad} of {:?}", v.dim())));
        }
        let value = v.select(Axis(0), rows);
        let g = self.grad_flag(&[ia]);
        Ok(self.push(value, Op::Gather(ia, rows.to_vec()), g))
    }

    fn ones_like(&mut self, v: Var) -> Var {
        let shape = self.shape(v);
        self.constant(Array2::ones(shape))
    }

    fn zeros_like(&mut self, v: Var) -> Var {
        let shape = self.shape(v);
        self.constant(Array2::zeros(shape))
    }

    fn add_opt(&mut self, a: Option<Var>, b: Option<Var>) -> Result<Option<Var>> {
        Ok(match (a, b) {
            (Some(a), Some(b)) => Some(self.add(a, b)?),
            (x, None) | (None, x) => x,
        })
    }

    fn mul_opt(&mut self, a: Option<Var>, b: Var) -> Result<Option<Var>> {
        a.map(|a| self.mul(a, b)).transpose()
    }

    /// Records a primitive on value nodes and propagates tangents
    /// `t_out = Σ_k ∂f/∂in_k · t_k`, with every tangent step itself recorded.
    pub fn record(&mut self, prim: Prim, inputs: &[Dual]) -> Result<Dual> {
        let arity = match prim {
            Prim::Add | Prim::Sub | Prim::Mul | Prim::Div | Prim::Max | Prim::Dot => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::Argument(format!("{prim:?} takes {arity} inputs, got {}", inputs.len())));
        }
        let a = inputs[0];
        let b = inputs.get(1).copied();
        let (value, tangent) = match prim {
            Prim::Add => {
                let b = b.expect("arity");
                (self.add(a.value, b.value)?, self.add_opt(a.tangent, b.tangent)?)
            }
            Prim::Sub => {
                let b = b.expect("arity");
                let tb = b.tangent.map(|t| self.neg(t)).transpose()?;
                (self.sub(a.value, b.value)?, self.add_opt(a.tangent, tb)?)
            }
            Prim::Mul => {
                let b = b.expect("arity");
                let ta = self.mul_opt(a.tangent, b.value)?;
                let tb = self.mul_opt(b.tangent, a.value)?;
                (self.mul(a.value, b.value)?, self.add_opt(ta, tb)?)
            }
            Prim::Div => {
                let b = b.expect("arity");
                let y = self.div(a.value, b.value)?;
                let tb = match b.tangent {
                    Some(t) => {
                        let yt = self.mul(y, t)?;
                        Some(self.neg(yt)?)
                    }
                    None => None,
                };
                let num = self.add_opt(a.tangent, tb)?;
                let t = num.map(|n| self.div(n, b.value)).transpose()?;
                (y, t)
            }
            Prim::Max => {
                let b = b.expect("arity");
                let y = self.max(a.value, b.value)?;
                let t = if a.tangent.is_none() && b.tangent.is_none() {
                    None
                } else {
                    let shape = self.shape(y);
                    let (va, vb) = (self.value(a.value).clone(), self.value(b.value).clone());
                    let mask = zip_broadcast(&va, &vb, shape, |x, y| if x >= y { 1.0 } else { 0.0 });
                    let inv = mask.mapv(|m| 1.0 - m);
                    let ma = self.constant(mask);
                    let mb = self.constant(inv);
                    let ta = self.mul_opt(a.tangent, ma)?;
                    let tb = self.mul_opt(b.tangent, mb)?;
                    self.add_opt(ta, tb)?
                };
                (y, t)
            }
            Prim::Dot => {
                let b = b.expect("arity");
                let ta = a.tangent.map(|t| self.dot(t, b.value)).transpose()?;
                let tb = b.tangent.map(|t| self.dot(a.value, t)).transpose()?;
                (self.dot(a.value, b.value)?, self.add_opt(ta, tb)?)
            }
            Prim::Neg => (self.neg(a.value)?, a.tangent.map(|t| self.neg(t)).transpose()?),
            Prim::Pow(p) => {
                let y = self.pow(a.value, p)?;
                let t = match a.tangent {
                    Some(t) => {
                        let d = if p == 1.0 { self.ones_like(a.value) } else { self.pow(a.value, p - 1.0)? };
                        let d = self.scale(d, p)?;
                        Some(self.mul(d, t)?)
                    }
                    None => None,
                };
                (y, t)
            }
            Prim::Exp => {
                let y = self.exp(a.value)?;
                (y, self.mul_opt(a.tangent, y)?)
            }
            Prim::Ln => {
                let y = self.ln(a.value)?;
                (y, a.tangent.map(|t| self.div(t, a.value)).transpose()?)
            }
            Prim::Sin => {
                let y = self.sin(a.value)?;
                let t = match a.tangent {
                    Some(t) => {
                        let c = self.cos(a.value)?;
                        Some(self.mul(c, t)?)
                    }
                    None => None,
                };
                (y, t)
            }
            Prim::Cos => {
                let y = self.cos(a.value)?;
                let t = match a.tangent {
                    Some(t) => {
                        let s = self.sin(a.value)?;
                        let ns = self.neg(s)?;
                        Some(self.mul(ns, t)?)
                    }
                    None => None,
                };
                (y, t)
            }
            Prim::Tanh => {
                let y = self.tanh(a.value)?;
                let t = match a.tangent {
                    Some(t) => {
                        let y2 = self.mul(y, y)?;
                        let d = self.affine(y2, -1.0, 1.0)?;
                        Some(self.mul(d, t)?)
                    }
                    None => None,
                };
                (y, t)
            }
            Prim::Softplus => {
                let y = self.softplus(a.value)?;
                let t = match a.tangent {
                    Some(t) => {
                        let d = self.sigmoid(a.value)?;
                        Some(self.mul(d, t)?)
                    }
                    None => None,
                };
                (y, t)
            }
            Prim::Abs => {
                let y = self.abs(a.value)?;
                let t = match a.tangent {
                    Some(t) => {
                        let sign = self.value(a.value).mapv(|x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 });
                        let sign = self.constant(sign);
                        Some(self.mul(sign, t)?)
                    }
                    None => None,
                };
                (y, t)
            }
            Prim::Sum => (self.sum(a.value)?, a.tangent.map(|t| self.sum(t)).transpose()?),
        };
        Ok(Dual { value, tangent })
    }

    /// Tangent-propagating `a · wᵀ` for a weight `w` that does not depend on the seed.
    pub fn dual_matmul_t(&mut self, a: Dual, w: Var) -> Result<Dual> {
        let value = self.matmul_t(a.value, w)?;
        let tangent = a.tangent.map(|t| self.matmul_t(t, w)).transpose()?;
        Ok(Dual { value, tangent })
    }

    /// Adds a seed-independent node (e.g. a bias).
    pub fn dual_add_const(&mut self, a: Dual, c: Var) -> Result<Dual> {
        let value = self.add(a.value, c)?;
        let tangent = match a.tangent {
            // A broadcast add can widen the value; keep the tangent the same shape.
            Some(t) if self.shape(t) != self.shape(value) => {
                let z = self.zeros_like(value);
                Some(self.add(t, z)?)
            }
            t => t,
        };
        Ok(Dual { value, tangent })
    }

    /// `k · a + b` for fixed scalars.
    pub fn dual_affine(&mut self, a: Dual, k: f64, b: f64) -> Result<Dual> {
        let value = self.affine(a.value, k, b)?;
        let tangent = a.tangent.map(|t| self.scale(t, k)).transpose()?;
        Ok(Dual { value, tangent })
    }

    pub fn dual_sigmoid(&mut self, a: Dual) -> Result<Dual> {
        let y = self.sigmoid(a.value)?;
        let tangent = match a.tangent {
            Some(t) => {
                let one_minus = self.affine(y, -1.0, 1.0)?;
                let d = self.mul(y, one_minus)?;
                Some(self.mul(d, t)?)
            }
            None => None,
        };
        Ok(Dual { value: y, tangent })
    }

    pub fn dual_concat(&mut self, parts: &[Dual]) -> Result<Dual> {
        let values: Vec<Var> = parts.iter().map(|p| p.value).collect();
        let value = self.concat(&values)?;
        let tangent = if parts.iter().all(|p| p.tangent.is_none()) {
            None
        } else {
            let mut ts = Vec::with_capacity(parts.len());
            for p in parts {
                ts.push(match p.tangent {
                    Some(t) => t,
                    None => self.zeros_like(p.value),
                });
            }
            Some(self.concat(&ts)?)
        };
        Ok(Dual { value, tangent })
    }

    /// Seeds a unit tangent on `x`.
    pub fn seed(&mut self, x: Var) -> Result<Dual> {
        self.check(x)?;
        let one = self.ones_like(x);
        Ok(Dual { value: x, tangent: Some(one) })
    }

    /// Node holding `∂f/∂x` for scalar `f` and scalar leaf `x`, obtained by
    /// seeding `x`'s tangent to 1. The node stays differentiable with respect to
    /// every other node `f` reads.
    pub fn input_derivative<F>(&mut self, x: Var, f: F) -> Result<Var>
    where
        F: FnOnce(&mut Tape, Dual) -> Result<Dual>,
    {
        let ix = self.check(x)?;
        if shape_of(&self.nodes[ix].value) != (1, 1) {
            return Err(Error::Argument("input_derivative needs a scalar input".into()));
        }
        let seeded = self.seed(x)?;
        let out = f(self, seeded)?;
        self.check(out.value)?;
        if self.shape(out.value) != (1, 1) {
            return Err(Error::Argument(format!(
                "input_derivative needs a scalar function, got shape {:?}",
                self.shape(out.value)
            )));
        }
        Ok(match out.tangent {
            Some(t) => t,
            None => self.scalar_const(0.0),
        })
    }

    /// Reverse sweep from a scalar output.
    pub fn gradients(&self, output: Var) -> Result<Gradients> {
        let out = self.check(output)?;
        if shape_of(&self.nodes[out].value) != (1, 1) {
            return Err(Error::Argument(format!(
                "gradient of non-scalar node with shape {:?}",
                shape_of(&self.nodes[out].value)
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; out + 1];
        grads[out] = Some(Array2::ones((1, 1)));
        for id in (0..=out).rev() {
            let Some(g) = grads[id].take() else { continue };
            if self.nodes[id].needs_grad {
                self.backprop(id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { tape: self.id, grads })
    }

    /// Flattened `∂output/∂wrt_k`, concatenated in `wrt` order.
    pub fn reverse_grad(&self, output: Var, wrt: &[Var]) -> Result<Vec<f64>> {
        for &w in wrt {
            self.check(w)?;
        }
        let grads = self.gradients(output)?;
        let mut out = Vec::new();
        for &w in wrt {
            match &grads.grads.get(w.id).and_then(|g| g.as_ref()) {
                Some(g) => out.extend(g.iter()),
                None => out.extend(std::iter::repeat_n(0.0, self.nodes[w.id].value.len())),
            }
        }
        Ok(out)
    }

    fn backprop(&self, id: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[id];
        let val = |i: usize| &self.nodes[i].value;
        let mut send = |target: usize, contrib: Array2<f64>| {
            if !self.nodes[target].needs_grad {
                return;
            }
            let contrib = reduce_to(contrib, shape_of(&self.nodes[target].value));
            match &mut grads[target] {
                Some(acc) => *acc += &contrib,
                slot @ None => *slot = Some(contrib),
            }
        };
        let wants = |i: usize| self.nodes[i].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                if wants(*b) {
                    send(*b, g.mapv(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let shape = shape_of(g);
                if wants(*a) {
                    send(*a, zip_broadcast(g, val(*b), shape, |x, y| x * y));
                }
                if wants(*b) {
                    send(*b, zip_broadcast(g, val(*a), shape, |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                let shape = shape_of(g);
                if wants(*a) {
                    send(*a, zip_broadcast(g, val(*b), shape, |x, y| x / y));
                }
                if wants(*b) {
                    // -g * y / b
                    let gy = zip_broadcast(g, &node.value, shape, |x, y| x * y);
                    send(*b, zip_broadcast(&gy, val(*b), shape, |x, y| -x / y));
                }
            }
            Op::Max(a, b) => {
                let shape = shape_of(g);
                let mask = zip_broadcast(val(*a), val(*b), shape, |x, y| if x >= y { 1.0 } else { 0.0 });
                if wants(*a) {
                    send(*a, &mask * g);
                }
                if wants(*b) {
                    send(*b, mask.mapv(|m| 1.0 - m) * g);
                }
            }
            Op::Neg(a) => send(*a, g.mapv(|x| -x)),
            Op::Pow(a, p) => {
                let p = *p;
                send(*a, Zip::from(g).and(val(*a)).map_collect(|&gx, &x| gx * p * x.powf(p - 1.0)));
            }
            Op::Exp(a) => send(*a, g * &node.value),
            Op::Ln(a) => send(*a, g / val(*a)),
            Op::Sin(a) => send(*a, Zip::from(g).and(val(*a)).map_collect(|&gx, &x| gx * x.cos())),
            Op::Cos(a) => send(*a, Zip::from(g).and(val(*a)).map_collect(|&gx, &x| -gx * x.sin())),
            Op::Tanh(a) => send(*a, Zip::from(g).and(&node.value).map_collect(|&gx, &y| gx * (1.0 - y * y))),
            Op::Softplus(a) => send(*a, Zip::from(g).and(val(*a)).map_collect(|&gx, &x| gx * sigmoid(x))),
            Op::Sigmoid(a) => send(*a, Zip::from(g).and(&node.value).map_collect(|&gx, &y| gx * y * (1.0 - y))),
            Op::Abs(a) => send(
                *a,
                Zip::from(g).and(val(*a)).map_collect(|&gx, &x| {
                    if x > 0.0 {
                        gx
                    } else if x < 0.0 {
                        -gx
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Affine(a, c) => {
                let c = *c;
                send(*a, g.mapv(|x| x * c));
            }
            Op::Sum(a) => send(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]])),
            Op::SumCols(a) => {
                let shape = val(*a).dim();
                send(*a, g.broadcast(shape).expect("column broadcast").to_owned());
            }
            Op::Dot(a, b) => {
                let s = g[[0, 0]];
                if wants(*a) {
                    send(*a, val(*b) * s);
                }
                if wants(*b) {
                    send(*b, val(*a) * s);
                }
            }
            Op::MatMul(a, b) => {
                if wants(*a) {
                    send(*a, g.dot(&val(*b).t()));
                }
                if wants(*b) {
                    send(*b, val(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if wants(*a) {
                    send(*a, g.dot(val(*b)));
                }
                if wants(*b) {
                    send(*b, g.t().dot(val(*a)));
                }
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    if wants(p) {
                        send(p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::Slice(a, start) => {
                let mut full = Array2::zeros(val(*a).dim());
                let w = g.ncols();
                full.slice_mut(s![.., *start..*start + w]).assign(g);
                send(*a, full);
            }
            Op::Gather(a, rows) => {
                let mut full = Array2::<f64>::zeros(val(*a).dim());
                for (k, &r) in rows.iter().enumerate() {
                    let mut dst = full.row_mut(r);
                    dst += &g.row(k);
                }
                send(*a, full);
            }
        }
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `v`, zero-filled to `shape` when absent.
    pub fn get_or_zeros(&self, v: Var, shape: Shape) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

/// Max over coordinates of `|analytic - central difference| / max(1, |analytic|)`
/// for the scalar function `f` at `point`.
pub fn gradcheck<F>(f: F, point: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step must be positive, got {h}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|&p| tape.var(p)).collect();
    let out = f(&mut tape, &vars)?;
    let analytic = tape.reverse_grad(out, &vars)?;
    let eval = |p: &[f64]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = p.iter().map(|&x| t.var(x)).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.scalar(o))
    };
    let mut worst: f64 = 0.0;
    let mut probe = point.to_vec();
    for k in 0..point.len() {
        probe[k] = point[k] + h;
        let up = eval(&probe)?;
        probe[k] = point[k] - h;
        let down = eval(&probe)?;
        probe[k] = point[k];
        let numeric = (up - down) / (2.0 * h);
        if !numeric.is_finite() || !analytic[k].is_finite() {
            return Err(Error::Evaluation(format!("non-finite derivative at coordinate {k}")));
        }
        worst = worst.max((analytic[k] - numeric).abs() / analytic[k].abs().max(1.0));
    }
    Ok(worst)
}
