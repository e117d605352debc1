//! Minimal reverse-mode automatic differentiation over `C x H x W` tensors.
//!
//! A [`Tape`] records every operation eagerly (values are computed as nodes are
//! pushed). [`Tape::backward`] walks the tape in reverse and returns the
//! gradient of a scalar node with respect to every node that requires one.
//! Only the operations needed by the attack objectives and the toy networks
//! are provided; network weights are constants owned by the op.

use std::sync::Arc;

use crate::nn::{Conv2d, Dense};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape { c: 1, h: 1, w: 1 };

    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn vector(n: usize) -> Self {
        Self { c: n, h: 1, w: 1 }
    }

    pub fn numel(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Fixed sparse linear map `out[o] += w * in[i]`.
#[derive(Debug, Clone)]
pub struct SparseMap {
    pub in_shape: Shape,
    pub out_shape: Shape,
    pub entries: Vec<(u32, u32, f64)>,
}

impl SparseMap {
    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.in_shape.numel());
        let mut out = vec![0.0; self.out_shape.numel()];
        for &(o, i, w) in &self.entries {
            out[o as usize] += w * input[i as usize];
        }
        out
    }

    fn apply_transposed(&self, grad_out: &[f64], grad_in: &mut [f64]) {
        for &(o, i, w) in &self.entries {
            grad_in[i as usize] += w * grad_out[o as usize];
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddConst(Var),
    MulConst(Var, Arc<Vec<f64>>),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Conv(Var, Arc<Conv2d>),
    Upsample2(Var),
    Dense(Var, Arc<Dense>),
    GridPool(Var, usize),
    Sum(Var),
    SumSquares(Var),
    Sqrt(Var),
    Cosine(Var, Var),
    Sparse(Var, Arc<SparseMap>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    shape: Shape,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `var`; zeros if the output does not depend on it.
    pub fn wrt(&self, var: Var, tape: &Tape) -> Vec<f64> {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| vec![0.0; tape.shape(var).numel()])
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    fn push(&mut self, value: Vec<f64>, shape: Shape, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.numel());
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input.
    pub fn input(&mut self, value: Vec<f64>, shape: Shape) -> Var {
        self.push(value, shape, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Vec<f64>, shape: Shape) -> Var {
        self.push(value, shape, Op::Leaf, false)
    }

    fn same_shape(&self, a: Var, b: Var) -> Shape {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "elementwise op on mismatched shapes");
        sa
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let shape = self.same_shape(a, b);
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(value, shape, op, rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let shape = self.shape(a);
        let value = self.value(a).iter().map(|x| f(*x)).collect();
        let rg = self.rg(a);
        self.push(value, shape, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a + c` for a constant buffer `c`.
    pub fn add_const(&mut self, a: Var, c: &[f64]) -> Var {
        let shape = self.shape(a);
        assert_eq!(c.len(), shape.numel());
        let value = self.value(a).iter().zip(c).map(|(x, y)| x + y).collect();
        let rg = self.rg(a);
        self.push(value, shape, Op::AddConst(a), rg)
    }

    /// `a - c` for a constant buffer `c`.
    pub fn sub_const(&mut self, a: Var, c: &[f64]) -> Var {
        let neg: Vec<f64> = c.iter().map(|v| -v).collect();
        self.add_const(a, &neg)
    }

    /// Elementwise product with a constant buffer.
    pub fn mul_const(&mut self, a: Var, c: Arc<Vec<f64>>) -> Var {
        let shape = self.shape(a);
        assert_eq!(c.len(), shape.numel());
        let value = self.value(a).iter().zip(c.iter()).map(|(x, y)| x * y).collect();
        let rg = self.rg(a);
        self.push(value, shape, Op::MulConst(a, c), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn conv(&mut self, a: Var, conv: &Arc<Conv2d>) -> Var {
        let (value, shape) = conv.forward(self.value(a), self.shape(a));
        let rg = self.rg(a);
        self.push(value, shape, Op::Conv(a, Arc::clone(conv)), rg)
    }

    /// Nearest-neighbour 2x spatial upsampling.
    pub fn upsample2(&mut self, a: Var) -> Var {
        let s = self.shape(a);
        let out = Shape::new(s.c, s.h * 2, s.w * 2);
        let src = self.value(a);
        let mut value = vec![0.0; out.numel()];
        for c in 0..s.c {
            for y in 0..out.h {
                for x in 0..out.w {
                    value[(c * out.h + y) * out.w + x] = src[(c * s.h + y / 2) * s.w + x / 2];
                }
            }
        }
        let rg = self.rg(a);
        self.push(value, out, Op::Upsample2(a), rg)
    }

    /// Fully connected layer over the flattened input.
    pub fn dense(&mut self, a: Var, dense: &Arc<Dense>) -> Var {
        let value = dense.forward(self.value(a));
        let shape = Shape::vector(dense.out_dim);
        let rg = self.rg(a);
        self.push(value, shape, Op::Dense(a, Arc::clone(dense)), rg)
    }

    /// Average pooling into a `grid x grid` layout, flattened to a vector of
    /// length `C * grid * grid`.
    pub fn grid_pool(&mut self, a: Var, grid: usize) -> Var {
        let s = self.shape(a);
        let src = self.value(a);
        let mut value = vec![0.0; s.c * grid * grid];
        for c in 0..s.c {
            for gy in 0..grid {
                let (y0, y1) = cell(gy, grid, s.h);
                for gx in 0..grid {
                    let (x0, x1) = cell(gx, grid, s.w);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            acc += src[(c * s.h + y) * s.w + x];
                        }
                    }
                    value[(c * grid + gy) * grid + gx] = acc / ((y1 - y0) * (x1 - x0)) as f64;
                }
            }
        }
        let rg = self.rg(a);
        self.push(value, Shape::vector(s.c * grid * grid), Op::GridPool(a, grid), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(vec![v], Shape::SCALAR, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.shape(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `‖a‖₂²`.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x * x).sum();
        let rg = self.rg(a);
        self.push(vec![v], Shape::SCALAR, Op::SumSquares(a), rg)
    }

    /// Scalar square root; its gradient at 0 is taken to be 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        assert_eq!(self.shape(a), Shape::SCALAR);
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    /// `‖a‖₂`, with a zero subgradient at the origin.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let sq = self.sum_squares(a);
        self.sqrt(sq)
    }

    /// Cosine similarity between two vectors of equal length. Yields 0 when
    /// either has zero norm.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b);
        let (va, vb) = (self.value(a), self.value(b));
        let (dot, na, nb) = dot_norms(va, vb);
        let v = if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(vec![v], Shape::SCALAR, Op::Cosine(a, b), rg)
    }

    pub fn sparse(&mut self, a: Var, map: &Arc<SparseMap>) -> Var {
        assert_eq!(self.shape(a), map.in_shape, "sparse map input shape");
        let value = map.apply(self.value(a));
        let rg = self.rg(a);
        self.push(value, map.out_shape, Op::Sparse(a, Arc::clone(map)), rg)
    }

    /// Reverse pass from the scalar node `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.shape(out), Shape::SCALAR, "backward needs a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.rg(v) {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * vb[i];
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * va[i];
                    }
                });
            }
            Op::AddConst(a) => acc(*a, &mut |d| add_into(d, g)),
            Op::MulConst(a, c) => acc(*a, &mut |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * c[i];
                }
            }),
            Op::Scale(a, k) => acc(*a, &mut |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * k;
                }
            }),
            Op::Tanh(a) => {
                let y = &node.value;
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Conv(a, conv) => {
                let in_shape = self.shape(*a);
                acc(*a, &mut |d| conv.backward_input(g, in_shape, d));
            }
            Op::Upsample2(a) => {
                let s = self.shape(*a);
                let (oh, ow) = (s.h * 2, s.w * 2);
                acc(*a, &mut |d| {
                    for c in 0..s.c {
                        for y in 0..oh {
                            for x in 0..ow {
                                d[(c * s.h + y / 2) * s.w + x / 2] += g[(c * oh + y) * ow + x];
                            }
                        }
                    }
                });
            }
            Op::Dense(a, dense) => acc(*a, &mut |d| dense.backward_input(g, d)),
            Op::GridPool(a, grid) => {
                let s = self.shape(*a);
                let grid = *grid;
                acc(*a, &mut |d| {
                    for c in 0..s.c {
                        for gy in 0..grid {
                            let (y0, y1) = cell(gy, grid, s.h);
                            for gx in 0..grid {
                                let (x0, x1) = cell(gx, grid, s.w);
                                let share = g[(c * grid + gy) * grid + gx]
                                    / ((y1 - y0) * (x1 - x0)) as f64;
                                for y in y0..y1 {
                                    for x in x0..x1 {
                                        d[(c * s.h + y) * s.w + x] += share;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::SumSquares(a) => {
                let va = self.value(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += 2.0 * va[i] * g[0];
                    }
                });
            }
            Op::Sqrt(a) => {
                let y = node.value[0];
                acc(*a, &mut |d| {
                    if y > 0.0 {
                        d[0] += g[0] * 0.5 / y;
                    }
                });
            }
            Op::Cosine(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (dot, na, nb) = dot_norms(va, vb);
                if na > 0.0 && nb > 0.0 {
                    let cos = dot / (na * nb);
                    acc(*a, &mut |d| {
                        for i in 0..d.len() {
                            d[i] += g[0] * (vb[i] / (na * nb) - cos * va[i] / (na * na));
                        }
                    });
                    acc(*b, &mut |d| {
                        for i in 0..d.len() {
                            d[i] += g[0] * (va[i] / (na * nb) - cos * vb[i] / (nb * nb));
                        }
                    });
                }
            }
            Op::Sparse(a, map) => acc(*a, &mut |d| map.apply_transposed(g, d)),
        }
    }
}

fn add_into(d: &mut [f64], g: &[f64]) {
    for (d, g) in d.iter_mut().zip(g) {
        *d += g;
    }
}

fn dot_norms(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot, na.sqrt(), nb.sqrt())
}

/// Half-open index range of cell `i` when `n` items are split into `parts`.
fn cell(i: usize, parts: usize, n: usize) -> (usize, usize) {
    let start = i * n / parts;
    let end = ((i + 1) * n / parts).max(start + 1).min(n);
    (start.min(n - 1), end)
}
