//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every primitive op as a node that owns its forward
//! value. Nodes are appended in evaluation order, so walking the node list
//! backwards is a valid reverse topological order and each node is visited
//! exactly once by [`Graph::backward`].
//!
//! Only two kinds of broadcasting exist: a row vector added to every row of
//! a matrix ([`Graph::add_row`]) and row reductions. Everything else is
//! elementwise on identical shapes.

use super::tensor::{gemm, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Huber(Var, f64),
    SumRows(Var),
    SumAll(Var),
    MeanAll(Var),
    ConcatCols(Var, Var),
    StopGrad(#[allow(dead_code)] Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the root through any
    /// differentiable path.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same-shape elementwise")
}

pub fn huber(x: f64, delta: f64) -> f64 {
    let a = x.abs();
    if a <= delta {
        0.5 * x * x
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn huber_grad(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        x
    } else {
        delta * x.signum()
    }
}

fn as_matrix(t: &Tensor) -> Option<(usize, usize)> {
    match t.shape().len() {
        2 => Some((t.shape()[0], t.shape()[1])),
        _ => None,
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// True when no gradient can flow from `v` back into its inputs.
    pub fn is_stopped(&self, v: Var) -> bool {
        !self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = match (as_matrix(av), as_matrix(bv)) {
            (Some(x), Some(y)) => (x, y),
            _ => {
                return Err(shape_err(
                    "matmul",
                    format!("expected matrices, got {:?} and {:?}", av.shape(), bv.shape()),
                ))
            }
        };
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("inner dimensions differ: [{m}, {k}] x [{k2}, {n}]"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        let t = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::MatMul(a, b), rg))
    }

    /// Adds the vector `b` (length = cols) to every row of matrix `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, n) = as_matrix(av).ok_or_else(|| {
            shape_err("add_row", format!("expected matrix, got {:?}", av.shape()))
        })?;
        if bv.len() != n || bv.shape().len() > 2 || (bv.shape().len() == 2 && bv.shape()[0] != 1) {
            return Err(shape_err(
                "add_row",
                format!("row vector {:?} does not match [{m}, {n}]", bv.shape()),
            ));
        }
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, &x) in row.iter_mut().zip(bv.data()) {
                *o += x;
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::AddRow(a, b), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.same_shape(bv, name)?;
        let t = elementwise(av, bv, f);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn huber(&mut self, a: Var, delta: f64) -> Var {
        self.unary(a, |x| huber(x, delta), Op::Huber(a, delta))
    }

    /// `[m, n] -> [m, 1]`
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = as_matrix(av).ok_or_else(|| {
            shape_err("sum_rows", format!("expected matrix, got {:?}", av.shape()))
        })?;
        let data = av.data().chunks(n.max(1)).map(|r| r.iter().sum()).collect::<Vec<f64>>();
        let data = if n == 0 { vec![0.0; m] } else { data };
        let t = Tensor::new(vec![m, 1], data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::SumRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len().max(1) as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::MeanAll(a), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, p, q) = match (as_matrix(av), as_matrix(bv)) {
            (Some((m, p)), Some((m2, q))) if m == m2 => (m, p, q),
            _ => {
                return Err(shape_err(
                    "concat_cols",
                    format!("{:?} and {:?}", av.shape(), bv.shape()),
                ))
            }
        };
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(&av.data()[i * p..(i + 1) * p]);
            out.extend_from_slice(&bv.data()[i * q..(i + 1) * q]);
        }
        let t = Tensor::new(vec![m, p + q], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::ConcatCols(a, b), rg))
    }

    /// Identity in the forward pass; blocks all gradient flow into `a`.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let t = self.value(a).clone();
        self.push(t, Op::StopGrad(a), false)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            match node.op {
                Op::Leaf => {
                    grads[idx] = Some(dy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(a), self.value(b));
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = bv.shape()[1];
                    if self.rg(a) {
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, dy.data(), false, bv.data(), true, &mut da, false);
                        accumulate(&mut grads, a, Tensor::new(vec![m, k], da)?);
                    }
                    if self.rg(b) {
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, av.data(), true, dy.data(), false, &mut db, false);
                        accumulate(&mut grads, b, Tensor::new(vec![k, n], db)?);
                    }
                }
                Op::AddRow(a, b) => {
                    if self.rg(b) {
                        let bv = self.value(b);
                        let n = bv.len();
                        let mut db = vec![0.0; n];
                        for row in dy.data().chunks(n) {
                            for (d, &x) in db.iter_mut().zip(row) {
                                *d += x;
                            }
                        }
                        accumulate(&mut grads, b, Tensor::new(bv.shape().to_vec(), db)?);
                    }
                    if self.rg(a) {
                        accumulate(&mut grads, a, dy);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(a) {
                        accumulate(&mut grads, a, dy.clone());
                    }
                    if self.rg(b) {
                        accumulate(&mut grads, b, dy);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(b) {
                        accumulate(&mut grads, b, dy.map(|x| -x));
                    }
                    if self.rg(a) {
                        accumulate(&mut grads, a, dy);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(a) {
                        accumulate(&mut grads, a, elementwise(&dy, self.value(b), |d, y| d * y));
                    }
                    if self.rg(b) {
                        accumulate(&mut grads, b, elementwise(&dy, self.value(a), |d, x| d * x));
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, a, dy.map(|d| c * d)),
                Op::AddScalar(a) => accumulate(&mut grads, a, dy),
                Op::Relu(a) => {
                    let g = elementwise(&dy, self.value(a), |d, x| if x > 0.0 { d } else { 0.0 });
                    accumulate(&mut grads, a, g)
                }
                Op::Tanh(a) => {
                    let g = elementwise(&dy, &node.value, |d, y| d * (1.0 - y * y));
                    accumulate(&mut grads, a, g)
                }
                Op::Exp(a) => {
                    let g = elementwise(&dy, &node.value, |d, y| d * y);
                    accumulate(&mut grads, a, g)
                }
                Op::Ln(a) => {
                    let g = elementwise(&dy, self.value(a), |d, x| d / x);
                    accumulate(&mut grads, a, g)
                }
                Op::Square(a) => {
                    let g = elementwise(&dy, self.value(a), |d, x| 2.0 * x * d);
                    accumulate(&mut grads, a, g)
                }
                Op::Huber(a, delta) => {
                    let g = elementwise(&dy, self.value(a), |d, x| d * huber_grad(x, delta));
                    accumulate(&mut grads, a, g)
                }
                Op::SumRows(a) => {
                    let av = self.value(a);
                    let n = av.cols();
                    let mut g = Vec::with_capacity(av.len());
                    for &d in dy.data() {
                        g.extend(std::iter::repeat(d).take(n));
                    }
                    accumulate(&mut grads, a, Tensor::new(av.shape().to_vec(), g)?)
                }
                Op::SumAll(a) => {
                    let av = self.value(a);
                    accumulate(&mut grads, a, Tensor::full(av.shape(), dy.item()))
                }
                Op::MeanAll(a) => {
                    let av = self.value(a);
                    let scale = dy.item() / av.len().max(1) as f64;
                    accumulate(&mut grads, a, Tensor::full(av.shape(), scale))
                }
                Op::ConcatCols(a, b) => {
                    let p = self.value(a).shape()[1];
                    let q = self.value(b).shape()[1];
                    let m = dy.shape()[0];
                    if self.rg(a) {
                        let mut ga = Vec::with_capacity(m * p);
                        for row in dy.data().chunks(p + q) {
                            ga.extend_from_slice(&row[..p]);
                        }
                        accumulate(&mut grads, a, Tensor::new(vec![m, p], ga)?);
                    }
                    if self.rg(b) {
                        let mut gb = Vec::with_capacity(m * q);
                        for row in dy.data().chunks(p + q) {
                            gb.extend_from_slice(&row[p..]);
                        }
                        accumulate(&mut grads, b, Tensor::new(vec![m, q], gb)?);
                    }
                }
                Op::StopGrad(_) => {}
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
