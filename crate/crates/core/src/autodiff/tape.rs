//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every op appends a node; `backward` walks the tape in exact reverse order
//! and accumulates gradients additively, so shared subexpressions receive the
//! sum of their consumers' contributions.

use std::cell::RefCell;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{matmul_at_acc, matmul_bt_acc, SparseMatrix, Tensor};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Second operand may be a `1 x n` row broadcast over the rows of the first.
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    ConcatCols(Var, Var),
    StackRows(Vec<Var>),
    Transpose(Var),
    MeanRows(Var),
    Sum(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Dropout(Var, Vec<f64>),
    Bce(Var, Vec<f64>),
    SelectRows(Var, Vec<usize>),
    SpMM(Rc<SparseMatrix>, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.data()[0]
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes.borrow()[a.0].value.map(f);
        let rg = self.needs(&[a]);
        self.push(value, op, rg)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.matmul(&nodes[b.0].value)?
        };
        Ok(self.push(value, Op::MatMul(a, b), self.needs(&[a, b])))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if x.shape() == y.shape() {
                let mut out = x.clone();
                out.add_assign(y);
                out
            } else if y.rows() == 1 && y.cols() == x.cols() {
                let mut out = x.clone();
                let cols = x.cols();
                for (i, o) in out.data_mut().iter_mut().enumerate() {
                    *o += y.data()[i % cols];
                }
                out
            } else {
                return Err(shape_err("add", x, y));
            }
        };
        Ok(self.push(value, Op::Add(a, b), self.needs(&[a, b])))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if x.shape() != y.shape() {
                return Err(shape_err("mul", x, y));
            }
            let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
            Tensor::from_vec(x.rows(), x.cols(), data)?
        };
        Ok(self.push(value, Op::Mul(a, b), self.needs(&[a, b])))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    /// Adds a constant to every entry.
    pub fn shift(&self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Shift(a))
    }

    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if x.rows() != y.rows() {
                return Err(shape_err("concat", x, y));
            }
            let mut data = Vec::with_capacity(x.len() + y.len());
            for r in 0..x.rows() {
                data.extend_from_slice(x.row(r));
                data.extend_from_slice(y.row(r));
            }
            Tensor::from_vec(x.rows(), x.cols() + y.cols(), data)?
        };
        Ok(self.push(value, Op::ConcatCols(a, b), self.needs(&[a, b])))
    }

    pub fn stack_rows(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("stack_rows of zero tensors"));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let first = &nodes[parts[0].0].value;
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                let t = &nodes[p.0].value;
                if t.cols() != first.cols() {
                    return Err(shape_err("stack_rows", first, t));
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::from_vec(rows, first.cols(), data)?
        };
        Ok(self.push(value, Op::StackRows(parts.to_vec()), self.needs(parts)))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let value = self.nodes.borrow()[a.0].value.transpose();
        self.push(value, Op::Transpose(a), self.needs(&[a]))
    }

    /// Column means: `[m x n] -> [1 x n]`.
    pub fn mean_rows(&self, a: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            if x.rows() == 0 {
                return Err(Error::invalid("mean_rows of an empty tensor"));
            }
            let mut out = vec![0.0; x.cols()];
            for r in 0..x.rows() {
                for (o, v) in out.iter_mut().zip(x.row(r)) {
                    *o += v;
                }
            }
            let m = x.rows() as f64;
            out.iter_mut().for_each(|o| *o /= m);
            Tensor::row_vector(out)
        };
        Ok(self.push(value, Op::MeanRows(a), self.needs(&[a])))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.nodes.borrow()[a.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), self.needs(&[a]))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax(&self, a: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            let mut out = x.clone();
            let cols = x.cols();
            for row in out.data_mut().chunks_mut(cols.max(1)) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    z += *v;
                }
                row.iter_mut().for_each(|v| *v /= z);
            }
            out
        };
        self.push(value, Op::Softmax(a), self.needs(&[a]))
    }

    /// Inverted dropout: at train time each entry survives with probability
    /// `1 - p` and is scaled by `1 / (1 - p)`. Identity at eval time.
    pub fn dropout(&self, a: Var, p: f64, seed: u64, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {p}")));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let (value, mask) = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let keep = 1.0 / (1.0 - p);
            let mask: Vec<f64> = (0..x.len())
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                .collect();
            let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
            (Tensor::from_vec(x.rows(), x.cols(), data)?, mask)
        };
        Ok(self.push(value, Op::Dropout(a, mask), self.needs(&[a])))
    }

    /// Mean binary cross-entropy of probabilities `p` against `labels`.
    pub fn bce_loss(&self, p: Var, labels: &[f64]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[p.0].value;
            if x.len() != labels.len() || labels.is_empty() {
                return Err(Error::Shape {
                    op: "bce_loss",
                    lhs: x.shape(),
                    rhs: (labels.len(), 1),
                });
            }
            let n = labels.len() as f64;
            let loss: f64 = x
                .data()
                .iter()
                .zip(labels)
                .map(|(&q, &y)| {
                    let q = q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
                })
                .sum();
            Tensor::scalar(loss / n)
        };
        Ok(self.push(value, Op::Bce(p, labels.to_vec()), self.needs(&[p])))
    }

    pub fn select_rows(&self, a: Var, rows: &[usize]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            let mut data = Vec::with_capacity(rows.len() * x.cols());
            for &r in rows {
                if r >= x.rows() {
                    return Err(Error::Shape {
                        op: "select_rows",
                        lhs: x.shape(),
                        rhs: (r, 0),
                    });
                }
                data.extend_from_slice(x.row(r));
            }
            Tensor::from_vec(rows.len(), x.cols(), data)?
        };
        Ok(self.push(value, Op::SelectRows(a, rows.to_vec()), self.needs(&[a])))
    }

    /// Constant sparse matrix times a dense variable.
    pub fn spmm(&self, s: &Rc<SparseMatrix>, a: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            let (sr, sc) = s.shape();
            if sc != x.rows() {
                return Err(Error::Shape {
                    op: "spmm",
                    lhs: (sr, sc),
                    rhs: x.shape(),
                });
            }
            let mut out = Tensor::zeros(sr, x.cols());
            s.mul_acc(x, &mut out);
            out
        };
        Ok(self.push(value, Op::SpMM(Rc::clone(s), a), self.needs(&[a])))
    }

    /// Reverse pass from a scalar `loss`, seeding its gradient with 1.
    pub fn backward(&self, loss: Var) -> Grads {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        let (r, c) = nodes[loss.0].value.shape();
        grads[loss.0] = Some(Tensor::filled(r, c, 1.0));

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Grads { grads }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], v: Var, f: impl FnOnce(&mut Tensor)) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| {
        let (r, c) = nodes[v.0].value.shape();
        Tensor::zeros(r, c)
    });
    f(slot);
}

fn elementwise(grads: &mut [Option<Tensor>], nodes: &[Node], v: Var, g: &Tensor, d: impl Fn(usize) -> f64) {
    accumulate(grads, nodes, v, |acc| {
        for (i, (a, gi)) in acc.data_mut().iter_mut().zip(g.data()).enumerate() {
            *a += gi * d(i);
        }
    });
}

fn backprop(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            accumulate(grads, nodes, *a, |acc| matmul_bt_acc(g, bv, acc));
            accumulate(grads, nodes, *b, |acc| matmul_at_acc(av, g, acc));
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, |acc| acc.add_assign(g));
            let bshape = nodes[b.0].value.shape();
            accumulate(grads, nodes, *b, |acc| {
                if bshape == g.shape() {
                    acc.add_assign(g);
                } else {
                    let cols = g.cols();
                    for (i, gi) in g.data().iter().enumerate() {
                        acc.data_mut()[i % cols] += gi;
                    }
                }
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            elementwise(grads, nodes, *a, g, |i| bv.data()[i]);
            elementwise(grads, nodes, *b, g, |i| av.data()[i]);
        }
        Op::Scale(a, c) => elementwise(grads, nodes, *a, g, |_| *c),
        Op::Shift(a) => elementwise(grads, nodes, *a, g, |_| 1.0),
        Op::ConcatCols(a, b) => {
            let ac = nodes[a.0].value.cols();
            let cols = y.cols();
            accumulate(grads, nodes, *a, |acc| {
                for r in 0..y.rows() {
                    for c in 0..ac {
                        acc.data_mut()[r * ac + c] += g.data()[r * cols + c];
                    }
                }
            });
            let bc = cols - ac;
            accumulate(grads, nodes, *b, |acc| {
                for r in 0..y.rows() {
                    for c in 0..bc {
                        acc.data_mut()[r * bc + c] += g.data()[r * cols + ac + c];
                    }
                }
            });
        }
        Op::StackRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let n = nodes[p.0].value.len();
                accumulate(grads, nodes, *p, |acc| {
                    for (a, gi) in acc.data_mut().iter_mut().zip(&g.data()[offset..offset + n]) {
                        *a += gi;
                    }
                });
                offset += n;
            }
        }
        Op::Transpose(a) => {
            let gt = g.transpose();
            accumulate(grads, nodes, *a, |acc| acc.add_assign(&gt));
        }
        Op::MeanRows(a) => {
            let m = nodes[a.0].value.rows() as f64;
            let cols = g.cols();
            accumulate(grads, nodes, *a, |acc| {
                for (i, v) in acc.data_mut().iter_mut().enumerate() {
                    *v += g.data()[i % cols] / m;
                }
            });
        }
        Op::Sum(a) => {
            let s = g.data()[0];
            elementwise(grads, nodes, *a, &Tensor::filled(1, nodes[a.0].value.len(), s), |_| 1.0);
        }
        Op::Tanh(a) => elementwise(grads, nodes, *a, g, |i| 1.0 - y.data()[i].powi(2)),
        Op::Relu(a) => {
            let x = &nodes[a.0].value;
            elementwise(grads, nodes, *a, g, |i| if x.data()[i] > 0.0 { 1.0 } else { 0.0 })
        }
        Op::Sigmoid(a) => elementwise(grads, nodes, *a, g, |i| {
            let s = y.data()[i];
            s * (1.0 - s)
        }),
        Op::Softmax(a) => {
            let cols = y.cols();
            accumulate(grads, nodes, *a, |acc| {
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for c in 0..cols {
                        acc.data_mut()[r * cols + c] += yr[c] * (gr[c] - dot);
                    }
                }
            });
        }
        Op::Dropout(a, mask) => elementwise(grads, nodes, *a, g, |i| mask[i]),
        Op::Bce(p, labels) => {
            let x = &nodes[p.0].value;
            let n = labels.len() as f64;
            let s = g.data()[0];
            accumulate(grads, nodes, *p, |acc| {
                for (i, a) in acc.data_mut().iter_mut().enumerate() {
                    let q = x.data()[i];
                    if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&q) {
                        let yv = labels[i];
                        *a += s * (-(yv / q) + (1.0 - yv) / (1.0 - q)) / n;
                    }
                }
            });
        }
        Op::SelectRows(a, rows) => {
            let cols = g.cols();
            accumulate(grads, nodes, *a, |acc| {
                for (k, &r) in rows.iter().enumerate() {
                    for c in 0..cols {
                        acc.data_mut()[r * cols + c] += g.data()[k * cols + c];
                    }
                }
            });
        }
        Op::SpMM(s, a) => accumulate(grads, nodes, *a, |acc| s.mul_t_acc(g, acc)),
    }
}
