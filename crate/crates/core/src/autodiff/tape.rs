//! Reverse-mode tape.
//!
//! Operations are appended to the tape in execution order. `backward` walks
//! the records in exact reverse order, so every node's gradient is complete
//! before it is propagated to its inputs. Leaves that require gradients keep
//! an accumulated `grad` buffer across `backward` calls until `zero_grad`.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{axis_split, gemm, Tensor};
use crate::error::{Error, Result};

/// Lower clamp applied to the inputs of `log` and to divisors.
pub const CLAMP_EPS: f64 = 1e-12;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Log(usize),
    Abs(usize),
    Pow(usize, f64),
    Huber(usize),
    Clamp(usize, f64, f64),
    Softmax { input: usize, axis: usize },
    Sum(usize),
    Mean(usize),
    SumAxis { input: usize, axis: usize },
    MaxAxis { input: usize, axis: usize, argmax: Vec<usize> },
    SliceRows { input: usize, start: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Dynamic computation record. Single-threaded; distinct tapes are independent.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        })
    }
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis < t.shape().len() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            detail: format!("axis {axis} out of range for shape {:?}", t.shape()),
        })
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
        .expect("shape preserved")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

impl Tape {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: RefCell::new(Vec::new()) }
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape == self.id {
            Ok(v.index)
        } else {
            Err(Error::ForeignVar)
        }
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad, grad: None });
        Var { tape: self.id, index: nodes.len() - 1 }
    }

    /// Records a leaf. Non-finite leaves are rejected.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Result<Var> {
        check_finite("leaf", &value)?;
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    pub fn constant(&self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn param(&self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> Result<Tensor> {
        let i = self.index(v)?;
        Ok(self.nodes.borrow()[i].value.clone())
    }

    /// Runs `f` against a borrowed value without cloning it.
    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> Result<R> {
        let i = self.index(v)?;
        Ok(f(&self.nodes.borrow()[i].value))
    }

    pub fn item(&self, v: Var) -> Result<f64> {
        self.with_value(v, |t| t.item())?
    }

    pub fn shape(&self, v: Var) -> Result<Vec<usize>> {
        self.with_value(v, |t| t.shape().to_vec())
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        let i = self.index(v)?;
        Ok(self.nodes.borrow()[i].requires_grad)
    }

    /// Accumulated gradient of a leaf, `None` until a backward pass reaches it.
    pub fn grad(&self, v: Var) -> Result<Option<Tensor>> {
        let i = self.index(v)?;
        Ok(self.nodes.borrow()[i].grad.clone())
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    fn unary(
        &self,
        name: &'static str,
        a: Var,
        f: impl FnOnce(&Tensor) -> Result<Tensor>,
        op: impl FnOnce(usize) -> Op,
    ) -> Result<Var> {
        let ia = self.index(a)?;
        let (out, rg) = {
            let nodes = self.nodes.borrow();
            let out = f(&nodes[ia].value)?;
            (out, nodes[ia].requires_grad)
        };
        check_finite(name, &out)?;
        Ok(self.push(out, op(ia), rg))
    }

    fn binary(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var> {
        let ia = self.index(a)?;
        let ib = self.index(b)?;
        let (out, rg) = {
            let nodes = self.nodes.borrow();
            let out = f(&nodes[ia].value, &nodes[ib].value)?;
            (out, nodes[ia].requires_grad || nodes[ib].requires_grad)
        };
        check_finite(name, &out)?;
        Ok(self.push(out, op(ia, ib), rg))
    }

    /// Matrix product of `m×k` and `k×n` matrices.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            "matmul",
            a,
            b,
            |x, y| {
                let (m, k) = x.dims2()?;
                let (k2, n) = y.dims2()?;
                if k != k2 {
                    return Err(Error::ShapeMismatch {
                        op: "matmul",
                        detail: format!("{:?} x {:?}", x.shape(), y.shape()),
                    });
                }
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, x.data(), false, y.data(), false, &mut out, 0.0);
                Tensor::matrix(m, n, out)
            },
            Op::MatMul,
        )
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row(&self, a: Var, bias: Var) -> Result<Var> {
        self.binary(
            "add_row",
            a,
            bias,
            |x, b| {
                let (m, n) = x.dims2()?;
                if b.len() != n {
                    return Err(Error::ShapeMismatch {
                        op: "add_row",
                        detail: format!("{:?} + {:?}", x.shape(), b.shape()),
                    });
                }
                let mut out = x.data().to_vec();
                for r in 0..m {
                    for (o, bv) in out[r * n..(r + 1) * n].iter_mut().zip(b.data()) {
                        *o += bv;
                    }
                }
                Tensor::matrix(m, n, out)
            },
            Op::AddRow,
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            "add",
            a,
            b,
            |x, y| {
                same_shape("add", x, y)?;
                Ok(zip(x, y, |p, q| p + q))
            },
            Op::Add,
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            "sub",
            a,
            b,
            |x, y| {
                same_shape("sub", x, y)?;
                Ok(zip(x, y, |p, q| p - q))
            },
            Op::Sub,
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            "mul",
            a,
            b,
            |x, y| {
                same_shape("mul", x, y)?;
                Ok(zip(x, y, |p, q| p * q))
            },
            Op::Mul,
        )
    }

    /// Elementwise `a / max(b, CLAMP_EPS)`.
    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            "div",
            a,
            b,
            |x, y| {
                same_shape("div", x, y)?;
                Ok(zip(x, y, |p, q| p / q.max(CLAMP_EPS)))
            },
            Op::Div,
        )
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        self.unary("scale", a, |x| Ok(map(x, |v| v * s)), |i| Op::Scale(i, s))
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Result<Var> {
        self.unary("add_scalar", a, |x| Ok(map(x, |v| v + s)), Op::AddScalar)
    }

    /// `1 - a`.
    pub fn one_minus(&self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| Ok(map(x, |v| v.max(0.0))), Op::Relu)
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, |x| Ok(map(x, sigmoid)), Op::Sigmoid)
    }

    /// Natural log of `max(a, CLAMP_EPS)`.
    pub fn log(&self, a: Var) -> Result<Var> {
        self.unary("log", a, |x| Ok(map(x, |v| v.max(CLAMP_EPS).ln())), Op::Log)
    }

    pub fn abs(&self, a: Var) -> Result<Var> {
        self.unary("abs", a, |x| Ok(map(x, f64::abs)), Op::Abs)
    }

    pub fn pow(&self, a: Var, p: f64) -> Result<Var> {
        self.unary("pow", a, |x| Ok(map(x, |v| v.powf(p))), |i| Op::Pow(i, p))
    }

    /// Smooth-L1 with unit transition point, elementwise.
    pub fn huber(&self, a: Var) -> Result<Var> {
        self.unary(
            "huber",
            a,
            |x| Ok(map(x, |v| if v.abs() < 1.0 { 0.5 * v * v } else { v.abs() - 0.5 })),
            Op::Huber,
        )
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is zero where clamped.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary("clamp", a, |x| Ok(map(x, |v| v.clamp(lo, hi))), |i| Op::Clamp(i, lo, hi))
    }

    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        self.unary(
            "softmax",
            a,
            |x| {
                check_axis("softmax", x, axis)?;
                let (outer, len, inner) = axis_split(x.shape(), axis);
                let src = x.data();
                let mut out = vec![0.0; src.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                        let mut total = 0.0;
                        for j in 0..len {
                            let e = (src[at(j)] - max).exp();
                            out[at(j)] = e;
                            total += e;
                        }
                        for j in 0..len {
                            out[at(j)] /= total;
                        }
                    }
                }
                Tensor::new(x.shape().to_vec(), out)
            },
            |input| Op::Softmax { input, axis },
        )
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        self.unary("sum", a, |x| Ok(Tensor::scalar(x.data().iter().sum())), Op::Sum)
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        self.unary(
            "mean",
            a,
            |x| {
                if x.is_empty() {
                    return Err(Error::ShapeMismatch { op: "mean", detail: "empty tensor".into() });
                }
                Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64))
            },
            Op::Mean,
        )
    }

    /// Sum over one axis; the axis is removed from the shape.
    pub fn sum_axis(&self, a: Var, axis: usize) -> Result<Var> {
        self.unary(
            "sum_axis",
            a,
            |x| {
                check_axis("sum_axis", x, axis)?;
                let (outer, len, inner) = axis_split(x.shape(), axis);
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            out[o * inner + i] += x.data()[(o * len + j) * inner + i];
                        }
                    }
                }
                Tensor::new(reduced_shape(x.shape(), axis), out)
            },
            |input| Op::SumAxis { input, axis },
        )
    }

    /// Maximum over one axis; ties route the gradient to the first maximum.
    pub fn max_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.index(a)?;
        let (out, argmax, rg) = {
            let nodes = self.nodes.borrow();
            let x = &nodes[ia].value;
            check_axis("max_axis", x, axis)?;
            let (outer, len, inner) = axis_split(x.shape(), axis);
            if len == 0 {
                return Err(Error::ShapeMismatch { op: "max_axis", detail: "empty axis".into() });
            }
            let mut out = vec![0.0; outer * inner];
            let mut argmax = vec![0; outer * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let mut best = 0;
                    for j in 1..len {
                        if x.data()[(o * len + j) * inner + i] > x.data()[(o * len + best) * inner + i] {
                            best = j;
                        }
                    }
                    out[o * inner + i] = x.data()[(o * len + best) * inner + i];
                    argmax[o * inner + i] = best;
                }
            }
            (Tensor::new(reduced_shape(x.shape(), axis), out)?, argmax, nodes[ia].requires_grad)
        };
        check_finite("max_axis", &out)?;
        Ok(self.push(out, Op::MaxAxis { input: ia, axis, argmax }, rg))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.unary(
            "slice_rows",
            a,
            |x| {
                let (m, n) = x.dims2()?;
                if start > end || end > m {
                    return Err(Error::ShapeMismatch {
                        op: "slice_rows",
                        detail: format!("rows {start}..{end} of {m}"),
                    });
                }
                Tensor::matrix(end - start, n, x.data()[start * n..end * n].to_vec())
            },
            |input| Op::SliceRows { input, start },
        )
    }

    /// Back-propagates from a scalar root. Gradients of leaves that require
    /// them are added to any gradient already stored from earlier calls.
    pub fn backward(&self, root: Var) -> Result<()> {
        let root = self.index(root)?;
        let mut nodes = self.nodes.borrow_mut();
        if !nodes[root].value.is_scalar() {
            return Err(Error::NotScalar { shape: nodes[root].value.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0]);

        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !nodes[idx].requires_grad {
                continue;
            }
            if matches!(nodes[idx].op, Op::Leaf) {
                let node = &mut nodes[idx];
                match &mut node.grad {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, d)| *a += d),
                    None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
                }
                continue;
            }
            let node = &nodes[idx];
            let y = node.value.data();
            let give = |grads: &mut Vec<Option<Vec<f64>>>, target: usize, contrib: Vec<f64>| {
                match &mut grads[target] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            };
            let wants = |i: usize| nodes[i].requires_grad;
            let val = |i: usize| nodes[i].value.data();

            match &node.op {
                Op::Leaf => unreachable!("leaves handled above"),
                &Op::MatMul(a, b) => {
                    let (m, k) = nodes[a].value.dims2()?;
                    let (_, n) = nodes[b].value.dims2()?;
                    if wants(a) {
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, &g, false, val(b), true, &mut da, 0.0);
                        give(&mut grads, a, da);
                    }
                    if wants(b) {
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, val(a), true, &g, false, &mut db, 0.0);
                        give(&mut grads, b, db);
                    }
                }
                &Op::AddRow(a, b) => {
                    let n = nodes[b].value.len();
                    if wants(b) {
                        let mut db = vec![0.0; n];
                        for row in g.chunks(n) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                        give(&mut grads, b, db);
                    }
                    if wants(a) {
                        give(&mut grads, a, g);
                    }
                }
                &Op::Add(a, b) => {
                    if wants(a) {
                        give(&mut grads, a, g.clone());
                    }
                    if wants(b) {
                        give(&mut grads, b, g);
                    }
                }
                &Op::Sub(a, b) => {
                    if wants(b) {
                        give(&mut grads, b, g.iter().map(|v| -v).collect());
                    }
                    if wants(a) {
                        give(&mut grads, a, g);
                    }
                }
                &Op::Mul(a, b) => {
                    if wants(a) {
                        give(&mut grads, a, g.iter().zip(val(b)).map(|(d, q)| d * q).collect());
                    }
                    if wants(b) {
                        give(&mut grads, b, g.iter().zip(val(a)).map(|(d, p)| d * p).collect());
                    }
                }
                &Op::Div(a, b) => {
                    if wants(a) {
                        let da = g.iter().zip(val(b)).map(|(d, q)| d / q.max(CLAMP_EPS)).collect();
                        give(&mut grads, a, da);
                    }
                    if wants(b) {
                        let db = g
                            .iter()
                            .zip(val(a).iter().zip(val(b)))
                            .map(|(d, (p, q))| if *q > CLAMP_EPS { -d * p / (q * q) } else { 0.0 })
                            .collect();
                        give(&mut grads, b, db);
                    }
                }
                &Op::Scale(a, s) => give(&mut grads, a, g.iter().map(|d| d * s).collect()),
                &Op::AddScalar(a) => give(&mut grads, a, g),
                &Op::Relu(a) => {
                    let da = g.iter().zip(val(a)).map(|(d, x)| if *x > 0.0 { *d } else { 0.0 }).collect();
                    give(&mut grads, a, da);
                }
                &Op::Sigmoid(a) => {
                    let da = g.iter().zip(y).map(|(d, s)| d * s * (1.0 - s)).collect();
                    give(&mut grads, a, da);
                }
                &Op::Log(a) => {
                    let da = g
                        .iter()
                        .zip(val(a))
                        .map(|(d, x)| if *x > CLAMP_EPS { d / x } else { 0.0 })
                        .collect();
                    give(&mut grads, a, da);
                }
                &Op::Abs(a) => {
                    let da = g.iter().zip(val(a)).map(|(d, x)| d * sign(*x)).collect();
                    give(&mut grads, a, da);
                }
                &Op::Pow(a, p) => {
                    let da = g.iter().zip(val(a)).map(|(d, x)| d * p * x.powf(p - 1.0)).collect();
                    give(&mut grads, a, da);
                }
                &Op::Huber(a) => {
                    let da = g.iter().zip(val(a)).map(|(d, x)| d * x.clamp(-1.0, 1.0)).collect();
                    give(&mut grads, a, da);
                }
                &Op::Clamp(a, lo, hi) => {
                    let da = g
                        .iter()
                        .zip(val(a))
                        .map(|(d, x)| if *x >= lo && *x <= hi { *d } else { 0.0 })
                        .collect();
                    give(&mut grads, a, da);
                }
                &Op::Softmax { input, axis } => {
                    let (outer, len, inner) = axis_split(node.value.shape(), axis);
                    let mut da = vec![0.0; g.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * len + j) * inner + i;
                            let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                da[at(j)] = y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                    give(&mut grads, input, da);
                }
                &Op::Sum(a) => {
                    let n = nodes[a].value.len();
                    give(&mut grads, a, vec![g[0]; n]);
                }
                &Op::Mean(a) => {
                    let n = nodes[a].value.len();
                    give(&mut grads, a, vec![g[0] / n as f64; n]);
                }
                &Op::SumAxis { input, axis } => {
                    let (outer, len, inner) = axis_split(nodes[input].value.shape(), axis);
                    let mut da = vec![0.0; outer * len * inner];
                    for o in 0..outer {
                        for j in 0..len {
                            for i in 0..inner {
                                da[(o * len + j) * inner + i] = g[o * inner + i];
                            }
                        }
                    }
                    give(&mut grads, input, da);
                }
                Op::MaxAxis { input, axis, argmax } => {
                    let (outer, len, inner) = axis_split(nodes[*input].value.shape(), *axis);
                    let mut da = vec![0.0; outer * len * inner];
                    for o in 0..outer {
                        for i in 0..inner {
                            da[(o * len + argmax[o * inner + i]) * inner + i] = g[o * inner + i];
                        }
                    }
                    give(&mut grads, *input, da);
                }
                &Op::SliceRows { input, start } => {
                    let (_, n) = nodes[input].value.dims2()?;
                    let mut da = vec![0.0; nodes[input].value.len()];
                    da[start * n..start * n + g.len()].copy_from_slice(&g);
                    give(&mut grads, input, da);
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_leaf(t: &Tape, v: &[f64], rg: bool) -> Var {
        t.leaf(Tensor::vector(v.to_vec()), rg).unwrap()
    }

    #[test]
    fn sigmoid_at_zero() {
        let t = Tape::new();
        let x = vec_leaf(&t, &[0.0], false);
        assert_eq!(t.value(t.sigmoid(x).unwrap()).unwrap().data(), &[0.5]);
    }

    #[test]
    fn softmax_uniform() {
        let t = Tape::new();
        let x = vec_leaf(&t, &[0.0, 0.0], false);
        let s = t.softmax(x, 0).unwrap();
        assert_eq!(t.value(s).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn abs_of_difference() {
        let t = Tape::new();
        let a = vec_leaf(&t, &[0.9, 0.1], false);
        let b = vec_leaf(&t, &[0.5, 0.5], false);
        let d = t.abs(t.sub(a, b).unwrap()).unwrap();
        let v = t.value(d).unwrap();
        assert!((v.data()[0] - 0.4).abs() < 1e-15);
        assert!((v.data()[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn square_derivative() {
        let t = Tape::new();
        let x = t.param(Tensor::scalar(3.0)).unwrap();
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().unwrap().data(), &[6.0]);
    }

    #[test]
    fn sigmoid_sum_derivative() {
        let t = Tape::new();
        let x = t.param(Tensor::vector(vec![0.0; 4])).unwrap();
        let y = t.sum(t.sigmoid(x).unwrap()).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let t = Tape::new();
        let x = t.param(Tensor::scalar(3.0)).unwrap();
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().unwrap().data(), &[12.0]);
        t.zero_grad();
        assert!(t.grad(x).unwrap().is_none());
    }

    #[test]
    fn non_scalar_root_rejected() {
        let t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(t.backward(x), Err(Error::NotScalar { .. })));
    }

    #[test]
    fn foreign_var_rejected() {
        let a = Tape::new();
        let b = Tape::new();
        let x = a.param(Tensor::scalar(1.0)).unwrap();
        assert!(matches!(b.backward(x), Err(Error::ForeignVar)));
        assert!(matches!(b.relu(x), Err(Error::ForeignVar)));
    }

    #[test]
    fn shape_mismatch_names_operator() {
        let t = Tape::new();
        let a = vec_leaf(&t, &[1.0, 2.0], false);
        let b = vec_leaf(&t, &[1.0], false);
        match t.add(a, b) {
            Err(Error::ShapeMismatch { op, .. }) => assert_eq!(op, "add"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overflow_is_a_numeric_fault() {
        let t = Tape::new();
        let a = vec_leaf(&t, &[1e300], false);
        match t.pow(a, 2.0) {
            Err(Error::NonFinite { op }) => assert_eq!(op, "pow"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_is_clamped() {
        let t = Tape::new();
        let a = t.param(Tensor::vector(vec![0.0])).unwrap();
        let l = t.log(a).unwrap();
        assert_eq!(t.value(l).unwrap().data()[0], CLAMP_EPS.ln());
        let s = t.sum(l).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(a).unwrap().unwrap().data(), &[0.0]);
    }

    #[test]
    fn max_axis_routes_to_first_maximum() {
        let t = Tape::new();
        let x = t.param(Tensor::matrix(2, 3, vec![1.0, 5.0, 5.0, 2.0, 0.0, -1.0]).unwrap()).unwrap();
        let m = t.max_axis(x, 1).unwrap();
        assert_eq!(t.value(m).unwrap().data(), &[5.0, 2.0]);
        let s = t.sum(m).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().unwrap().data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn frozen_inputs_receive_no_gradient() {
        let t = Tape::new();
        let w = t.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let x = t.param(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap()).unwrap();
        let y = t.sum(t.matmul(x, w).unwrap()).unwrap();
        t.backward(y).unwrap();
        assert!(t.grad(w).unwrap().is_none());
        assert_eq!(t.grad(x).unwrap().unwrap().data(), &[3.0, 7.0]);
    }
}
