//! Primitive operations. Every backward rule is written in terms of other
//! primitives, so gradients recorded with `create_graph` can be
//! differentiated again.

use std::cell::Cell;
use std::fmt;
use std::rc::Rc;

use super::array::{self, NdArray};
use super::tape::{Node, Tape, Tensor};
use crate::error::{Error, Result};

/// Identifier of a primitive, used in diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    AddScalar,
    MatMul,
    Transpose,
    Exp,
    Log,
    Sqrt,
    Square,
    Sin,
    Cos,
    Relu,
    Sigmoid,
    Softplus,
    Clamp01,
    Sum,
    Mean,
    SumTo,
    Broadcast,
    Reshape,
    ConcatRows,
    SliceRows,
    GatherCols,
    ScatterCols,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Neg => "neg",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sqrt => "sqrt",
            OpKind::Square => "square",
            OpKind::Sin => "sin",
            OpKind::Cos => "cos",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softplus => "softplus",
            OpKind::Clamp01 => "clamp01",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SumTo => "sum_to",
            OpKind::Broadcast => "broadcast",
            OpKind::Reshape => "reshape",
            OpKind::ConcatRows => "concat_rows",
            OpKind::SliceRows => "slice_rows",
            OpKind::GatherCols => "gather_cols",
            OpKind::ScatterCols => "scatter_cols",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        ALL_KINDS.iter().copied().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const ALL_KINDS: [OpKind; 29] = [
    OpKind::Leaf,
    OpKind::Add,
    OpKind::Sub,
    OpKind::Mul,
    OpKind::Div,
    OpKind::Neg,
    OpKind::Scale,
    OpKind::AddScalar,
    OpKind::MatMul,
    OpKind::Transpose,
    OpKind::Exp,
    OpKind::Log,
    OpKind::Sqrt,
    OpKind::Square,
    OpKind::Sin,
    OpKind::Cos,
    OpKind::Relu,
    OpKind::Sigmoid,
    OpKind::Softplus,
    OpKind::Clamp01,
    OpKind::Sum,
    OpKind::Mean,
    OpKind::SumTo,
    OpKind::Broadcast,
    OpKind::Reshape,
    OpKind::ConcatRows,
    OpKind::SliceRows,
    OpKind::GatherCols,
    OpKind::ScatterCols,
];

/// Test fixture: flips the sign of one primitive's backward rule on the
/// current thread so gradient suites can be shown to catch it.
#[doc(hidden)]
pub mod fault {
    use super::*;

    thread_local! {
        static FLIPPED: Cell<Option<OpKind>> = const { Cell::new(None) };
    }

    pub fn inject(kind: Option<OpKind>) {
        FLIPPED.with(|f| f.set(kind));
    }

    pub(crate) fn active(kind: OpKind) -> bool {
        FLIPPED.with(|f| f.get() == Some(kind))
    }
}

#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    AddScalar,
    MatMul { ta: bool, tb: bool },
    Transpose,
    Exp,
    Log,
    Sqrt,
    Square,
    Sin,
    Cos,
    Relu,
    Sigmoid,
    Softplus,
    Clamp01,
    Sum,
    Mean,
    SumTo,
    Broadcast,
    Reshape,
    ConcatRows,
    SliceRows { start: usize },
    GatherCols(Rc<Vec<Option<usize>>>),
    ScatterCols(Rc<Vec<Option<usize>>>),
}

impl Op {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add => OpKind::Add,
            Op::Sub => OpKind::Sub,
            Op::Mul => OpKind::Mul,
            Op::Div => OpKind::Div,
            Op::Neg => OpKind::Neg,
            Op::Scale(_) => OpKind::Scale,
            Op::AddScalar => OpKind::AddScalar,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Transpose => OpKind::Transpose,
            Op::Exp => OpKind::Exp,
            Op::Log => OpKind::Log,
            Op::Sqrt => OpKind::Sqrt,
            Op::Square => OpKind::Square,
            Op::Sin => OpKind::Sin,
            Op::Cos => OpKind::Cos,
            Op::Relu => OpKind::Relu,
            Op::Sigmoid => OpKind::Sigmoid,
            Op::Softplus => OpKind::Softplus,
            Op::Clamp01 => OpKind::Clamp01,
            Op::Sum => OpKind::Sum,
            Op::Mean => OpKind::Mean,
            Op::SumTo => OpKind::SumTo,
            Op::Broadcast => OpKind::Broadcast,
            Op::Reshape => OpKind::Reshape,
            Op::ConcatRows => OpKind::ConcatRows,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::GatherCols(_) => OpKind::GatherCols,
            Op::ScatterCols(_) => OpKind::ScatterCols,
        }
    }

    /// Input cotangents given the output cotangent `g`. Only entries with
    /// `needs[i]` are computed.
    pub(crate) fn backward(
        &self,
        xs: &[Tensor],
        y: &Tensor,
        g: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let want = |i: usize| needs.get(i).copied().unwrap_or(false);
        let mut out: Vec<Option<Tensor>> = vec![None; xs.len()];
        match self {
            Op::Leaf => {}
            Op::Add => {
                out[0] = Some(g.clone());
                out[1] = Some(g.clone());
            }
            Op::Sub => {
                out[0] = Some(g.clone());
                if want(1) {
                    out[1] = Some(g.neg());
                }
            }
            Op::Mul => {
                if want(0) {
                    out[0] = Some(g.mul(&xs[1])?);
                }
                if want(1) {
                    out[1] = Some(g.mul(&xs[0])?);
                }
            }
            Op::Div => {
                if want(0) {
                    out[0] = Some(g.div(&xs[1])?);
                }
                if want(1) {
                    out[1] = Some(g.mul(y)?.div(&xs[1])?.neg());
                }
            }
            Op::Neg => out[0] = Some(g.neg()),
            Op::Scale(c) => out[0] = Some(g.scale(*c)),
            Op::AddScalar => out[0] = Some(g.clone()),
            Op::MatMul { ta, tb } => {
                let (a, b) = (&xs[0], &xs[1]);
                if want(0) {
                    out[0] = Some(if *ta {
                        b.matmul_t(g, *tb, true)?
                    } else {
                        g.matmul_t(b, false, !*tb)?
                    });
                }
                if want(1) {
                    out[1] = Some(if *tb {
                        g.matmul_t(a, true, *ta)?
                    } else {
                        a.matmul_t(g, !*ta, false)?
                    });
                }
            }
            Op::Transpose => out[0] = Some(g.transpose()?),
            Op::Exp => out[0] = Some(g.mul(y)?),
            Op::Log => out[0] = Some(g.div(&xs[0])?),
            Op::Sqrt => out[0] = Some(g.div(&y.scale(2.0))?),
            Op::Square => out[0] = Some(g.mul(&xs[0].scale(2.0))?),
            Op::Sin => out[0] = Some(g.mul(&xs[0].cos())?),
            Op::Cos => out[0] = Some(g.mul(&xs[0].sin())?.neg()),
            Op::Relu => {
                let mask = xs[0].value.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                out[0] = Some(g.mul(&Tensor::constant(mask))?);
            }
            Op::Sigmoid => {
                let one_minus = y.neg().add_scalar(1.0);
                out[0] = Some(g.mul(&y.mul(&one_minus)?)?);
            }
            Op::Softplus => out[0] = Some(g.mul(&xs[0].sigmoid())?),
            Op::Clamp01 => {
                let mask = xs[0]
                    .value
                    .map(|x| if x > 0.0 && x < 1.0 { 1.0 } else { 0.0 });
                out[0] = Some(g.mul(&Tensor::constant(mask))?);
            }
            Op::Sum => out[0] = Some(g.broadcast_to(xs[0].shape())?),
            Op::Mean => {
                let n = xs[0].len() as f64;
                out[0] = Some(g.broadcast_to(xs[0].shape())?.scale(1.0 / n));
            }
            Op::SumTo => out[0] = Some(g.broadcast_to(xs[0].shape())?),
            Op::Broadcast => out[0] = Some(g.sum_to(xs[0].shape())?),
            Op::Reshape => out[0] = Some(g.reshape(xs[0].shape())?),
            Op::ConcatRows => {
                let mut start = 0;
                for (i, x) in xs.iter().enumerate() {
                    let rows = x.shape()[0];
                    if want(i) {
                        out[i] = Some(g.slice_rows(start, start + rows)?);
                    }
                    start += rows;
                }
            }
            Op::SliceRows { start } => {
                let x = &xs[0];
                let rows = x.shape()[0];
                let end = start + g.shape()[0];
                let mut parts = Vec::with_capacity(3);
                let pad = |n: usize| {
                    let mut s = x.shape().to_vec();
                    s[0] = n;
                    Tensor::constant(NdArray::zeros(&s))
                };
                if *start > 0 {
                    parts.push(pad(*start));
                }
                parts.push(g.clone());
                if end < rows {
                    parts.push(pad(rows - end));
                }
                out[0] = Some(Tensor::concat_rows(&parts)?);
            }
            Op::GatherCols(idx) => {
                let cols = xs[0].shape()[1];
                out[0] = Some(g.scatter_cols_rc(idx.clone(), cols)?);
            }
            Op::ScatterCols(idx) => out[0] = Some(g.gather_cols_rc(idx.clone())?),
        }
        if fault::active(self.kind()) {
            out = out.into_iter().map(|o| o.map(|t| t.neg())).collect();
        }
        Ok(out)
    }
}

/// The shared tape among `inputs`, if any of them is recorded.
fn common_tape(inputs: &[&Tensor]) -> Result<Option<Tape>> {
    let mut tape: Option<&Tape> = None;
    for t in inputs {
        if let Some(n) = &t.node {
            match tape {
                None => tape = Some(&n.tape),
                Some(prev) if prev.same(&n.tape) => {}
                Some(_) => return Err(Error::TapeMismatch),
            }
        }
    }
    Ok(tape.cloned())
}

fn record(op: Op, inputs: &[&Tensor], value: NdArray) -> Result<Tensor> {
    let tape = common_tape(inputs)?;
    let value = Rc::new(value);
    match tape {
        Some(tape) if tape.is_recording() => {
            let id = tape.push(Node {
                op,
                inputs: inputs.iter().map(|t| t.saved()).collect(),
                output: value.clone(),
            });
            Ok(Tensor {
                value,
                node: Some(super::tape::NodeRef { tape, id }),
            })
        }
        _ => Ok(Tensor { value, node: None }),
    }
}

/// Unary ops cannot fail on tape grounds; this unwraps that case.
fn record1(op: Op, x: &Tensor, value: NdArray) -> Tensor {
    record(op, &[x], value).expect("single-input record cannot mismatch tapes")
}

impl Tensor {
    fn binary(
        &self,
        other: &Tensor,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape() != other.shape() {
            let target = array::broadcast_shapes(name, self.shape(), other.shape())?;
            let a = if self.shape() == target.as_slice() {
                self.clone()
            } else {
                self.broadcast_to(&target)?
            };
            let b = if other.shape() == target.as_slice() {
                other.clone()
            } else {
                other.broadcast_to(&target)?
            };
            return a.binary(&b, op, name, f);
        }
        let v = self.value.zip(&other.value, f);
        record(op, &[self, other], v)
    }

    /// Elementwise sum; shapes broadcast.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Add, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Sub, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Mul, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Div, "div", |a, b| a / b)
    }

    pub fn neg(&self) -> Tensor {
        record1(Op::Neg, self, self.value.map(|x| -x))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        record1(Op::Scale(c), self, self.value.map(|x| x * c))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        record1(Op::AddScalar, self, self.value.map(|x| x + c))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) · op(other)` where `ta`/`tb` transpose the operands.
    pub fn matmul_t(&self, other: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
        let v = array::matmul(&self.value, &other.value, ta, tb)?;
        record(Op::MatMul { ta, tb }, &[self, other], v)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let v = array::transpose(&self.value)?;
        Ok(record1(Op::Transpose, self, v))
    }

    pub fn exp(&self) -> Tensor {
        record1(Op::Exp, self, self.value.map(f64::exp))
    }

    pub fn log(&self) -> Result<Tensor> {
        if let Some(x) = self.data().iter().find(|&&x| x < 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("negative input {x}"),
            });
        }
        Ok(record1(Op::Log, self, self.value.map(f64::ln)))
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if let Some(x) = self.data().iter().find(|&&x| x < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("negative input {x}"),
            });
        }
        Ok(record1(Op::Sqrt, self, self.value.map(f64::sqrt)))
    }

    pub fn square(&self) -> Tensor {
        record1(Op::Square, self, self.value.map(|x| x * x))
    }

    pub fn sin(&self) -> Tensor {
        record1(Op::Sin, self, self.value.map(f64::sin))
    }

    pub fn cos(&self) -> Tensor {
        record1(Op::Cos, self, self.value.map(f64::cos))
    }

    pub fn relu(&self) -> Tensor {
        record1(Op::Relu, self, self.value.map(|x| x.max(0.0)))
    }

    pub fn sigmoid(&self) -> Tensor {
        record1(Op::Sigmoid, self, self.value.map(sigmoid))
    }

    /// `log(1 + exp(x))`, evaluated without overflow.
    pub fn softplus(&self) -> Tensor {
        record1(Op::Softplus, self, self.value.map(softplus))
    }

    /// `min(max(x, 0), 1)`. Gradient is 1 strictly inside `(0, 1)`, else 0.
    pub fn clamp01(&self) -> Tensor {
        record1(Op::Clamp01, self, self.value.map(|x| x.clamp(0.0, 1.0)))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        record1(Op::Sum, self, NdArray::scalar(s))
    }

    pub fn mean(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        record1(Op::Mean, self, NdArray::scalar(s / self.len() as f64))
    }

    /// Reduces by summation to `shape`, which must broadcast to `self`.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor> {
        let v = array::sum_to(&self.value, shape)?;
        Ok(record1(Op::SumTo, self, v))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        let v = array::broadcast_to(&self.value, shape)?;
        Ok(record1(Op::Broadcast, self, v))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let v = (*self.value).clone().reshaped(shape)?;
        Ok(record1(Op::Reshape, self, v))
    }

    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        let arrays: Vec<&NdArray> = parts.iter().map(|t| &*t.value).collect();
        let v = array::concat_rows(&arrays)?;
        let refs: Vec<&Tensor> = parts.iter().collect();
        record(Op::ConcatRows, &refs, v)
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let v = array::slice_rows(&self.value, start, end)?;
        Ok(record1(Op::SliceRows { start }, self, v))
    }

    /// Picks columns of a `[rows, cols]` tensor; `None` entries read as zero.
    pub fn gather_cols(&self, idx: Vec<Option<usize>>) -> Result<Tensor> {
        self.gather_cols_rc(Rc::new(idx))
    }

    pub(crate) fn gather_cols_rc(&self, idx: Rc<Vec<Option<usize>>>) -> Result<Tensor> {
        let v = array::gather_cols(&self.value, &idx)?;
        Ok(record1(Op::GatherCols(idx), self, v))
    }

    pub fn scatter_cols(&self, idx: Vec<Option<usize>>, cols: usize) -> Result<Tensor> {
        self.scatter_cols_rc(Rc::new(idx), cols)
    }

    pub(crate) fn scatter_cols_rc(&self, idx: Rc<Vec<Option<usize>>>, cols: usize) -> Result<Tensor> {
        let v = array::scatter_cols(&self.value, &idx, cols)?;
        Ok(record1(Op::ScatterCols(idx), self, v))
    }

    /// Element `i` of the flattened tensor as a `[1]` tensor.
    pub fn pick(&self, i: usize) -> Result<Tensor> {
        let n = self.len();
        self.reshape(&[1, n])?.gather_cols(vec![Some(i)])?.reshape(&[1])
    }

    /// Row-wise Euclidean norms `[N, h] -> [N, 1]`, smoothed as `sqrt(|x|^2 + eps)`.
    pub fn l2norm_rows(&self, eps: f64) -> Result<Tensor> {
        if self.shape().len() != 2 {
            return Err(Error::shape("l2norm_rows", self.shape(), &[]));
        }
        let rows = self.shape()[0];
        self.square().sum_to(&[rows, 1])?.add_scalar(eps).sqrt()
    }

    /// Column means of a `[N, h]` tensor, shape `[1, h]`.
    pub fn mean_rows(&self) -> Result<Tensor> {
        if self.shape().len() != 2 || self.shape()[0] == 0 {
            return Err(Error::shape("mean_rows", self.shape(), &[]));
        }
        let (n, h) = (self.shape()[0], self.shape()[1]);
        Ok(self.sum_to(&[1, h])?.scale(1.0 / n as f64))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
