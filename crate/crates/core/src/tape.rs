//! Reverse-mode differentiation over dense tensors.
//!
//! Every operation appends a node holding its output value and enough of its
//! inputs to run the backward rule. [`Tape::backward`] walks the nodes in
//! reverse registration order and accumulates vector-Jacobian products.
//!
//! ```
//! use amcnn::tape::Tape;
//! use amcnn::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0), true);
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[6.0]);
//! ```

use crate::error::{Error, Result};
use crate::tensor::{
    concat_data, gemm_nn, gemm_nt, gemm_tn, matmul_dims, slice_data, softmax_in_place,
    split_axis, transpose_data, Tensor,
};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Discriminant of a recorded operation, used for reporting and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale,
    Tanh,
    Sigmoid,
    Relu,
    Softmax,
    SoftmaxCols,
    Concat,
    Slice,
    Reshape,
    Sum,
    SumAxis,
    MaxRows,
    Conv,
    Nll,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    SoftmaxCols(Var),
    Concat { a: Var, b: Var, axis: usize },
    Slice { src: Var, axis: usize, start: usize },
    Reshape(Var),
    Sum(Var),
    SumAxis { src: Var, axis: usize },
    MaxRows { src: Var, argmax: Vec<usize> },
    Conv { input: Var, filters: Var, bias: Var },
    Nll { probs: Var, label: usize },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Relu(_) => OpKind::Relu,
            Op::Softmax(_) => OpKind::Softmax,
            Op::SoftmaxCols(_) => OpKind::SoftmaxCols,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Sum(_) => OpKind::Sum,
            Op::SumAxis { .. } => OpKind::SumAxis,
            Op::MaxRows { .. } => OpKind::MaxRows,
            Op::Conv { .. } => OpKind::Conv,
            Op::Nll { .. } => OpKind::Nll,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Floor applied to a probability before taking its log in [`Tape::nll`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

/// Gradients of one scalar with respect to every node that required them.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `target`'s grad buffer, enabling it if needed.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor) {
        let Some(g) = self.get(v) else { return };
        if !target.requires_grad() {
            target.set_requires_grad(true);
        }
        for (t, &d) in target.grad_mut().unwrap().iter_mut().zip(g) {
            *t += d;
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scales the backward output of every `kind` op by 1.5. Only useful for
    /// showing that the gradient checker catches a broken rule.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: value.detached(),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = matmul_dims(self.shape(a), self.shape(b))?;
        let mut out = vec![0.0; m * n];
        gemm_nn(self.data(a), self.data(b), &mut out, m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        Ok(self.push(t, Op::Transpose(a), &[a]))
    }

    pub fn unary(&mut self, op: Unary, a: Var) -> Var {
        let x = self.value(a);
        let (y, node) = match op {
            Unary::Tanh => (x.map(f64::tanh), Op::Tanh(a)),
            Unary::Sigmoid => (x.map(sigmoid), Op::Sigmoid(a)),
            Unary::Relu => (x.map(|v| v.max(0.0)), Op::Relu(a)),
        };
        self.push(y, node, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    /// Elementwise binary op. Operands share a shape, or one holds a single element.
    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let na = self.value(a).numel();
        let nb = self.value(b).numel();
        let shape = if sa == sb || nb == 1 {
            sa.to_vec()
        } else if na == 1 {
            sb.to_vec()
        } else {
            return Err(Error::dim("elementwise", sa, sb));
        };
        let f = match op {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
        };
        let (da, db) = (self.data(a), self.data(b));
        let n = na.max(nb);
        let out: Vec<f64> = (0..n)
            .map(|i| f(da[if na == 1 { 0 } else { i }], db[if nb == 1 { 0 } else { i }]))
            .collect();
        let node = match op {
            Binary::Add => Op::Add(a, b),
            Binary::Sub => Op::Sub(a, b),
            Binary::Mul => Op::Mul(a, b),
        };
        Ok(self.push(Tensor::new(shape, out)?, node, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// Multiplication by a fixed constant.
    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let y = self.value(a).map(|v| v * s);
        self.push(y, Op::Scale(a, s), &[a])
    }

    /// Stable softmax over all elements of `a`.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let y = self.value(a).softmax_stable()?;
        Ok(self.push(y, Op::Softmax(a), &[a]))
    }

    /// Softmax of each column of a matrix, normalizing across rows.
    pub fn softmax_cols(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.ndim() != 2 || x.rows() == 0 {
            return Err(Error::arg(format!(
                "softmax_cols needs a non-empty matrix, got {:?}",
                x.shape()
            )));
        }
        let (r, c) = (x.rows(), x.cols());
        let mut t = transpose_data(x.data(), r, c);
        for col in t.chunks_mut(r) {
            softmax_in_place(col);
        }
        let y = Tensor::matrix(r, c, transpose_data(&t, c, r))?;
        Ok(self.push(y, Op::SoftmaxCols(a), &[a]))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (shape, data) = concat_data(self.shape(a), self.data(a), self.shape(b), self.data(b), axis)?;
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat { a, b, axis }, &[a, b]))
    }

    /// Concatenates many tensors along `axis`, left to right.
    pub fn concat_all(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let (&first, rest) = parts
            .split_first()
            .ok_or_else(|| Error::arg("concat of zero tensors"))?;
        rest.iter().try_fold(first, |acc, &p| self.concat(acc, p, axis))
    }

    pub fn slice(&mut self, src: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (shape, data) = slice_data(self.shape(src), self.data(src), axis, start, len)?;
        Ok(self.push(Tensor::new(shape, data)?, Op::Slice { src, axis, start }, &[src]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(a).reshape(shape)?;
        Ok(self.push(y, Op::Reshape(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Sums a matrix over `axis`: 0 gives column sums, 1 gives row sums.
    pub fn sum_axis(&mut self, src: Var, axis: usize) -> Result<Var> {
        let x = self.value(src);
        if x.ndim() != 2 || axis > 1 {
            return Err(Error::arg(format!(
                "sum_axis({axis}) needs a matrix, got {:?}",
                x.shape()
            )));
        }
        let (r, c) = (x.rows(), x.cols());
        let d = x.data();
        let out: Vec<f64> = if axis == 0 {
            (0..c).map(|j| (0..r).map(|i| d[i * c + j]).sum()).collect()
        } else {
            d.chunks(c).map(|row| row.iter().sum()).collect()
        };
        Ok(self.push(Tensor::vector(out), Op::SumAxis { src, axis }, &[src]))
    }

    /// Maximum of every column of a matrix (or of a whole vector).
    /// Gradient flows to the first maximal row on ties.
    pub fn max_rows(&mut self, src: Var) -> Result<Var> {
        let x = self.value(src);
        if x.numel() == 0 {
            return Err(Error::arg("max over an empty tensor"));
        }
        let (r, c) = match x.ndim() {
            1 => (x.numel(), 1),
            2 => (x.rows(), x.cols()),
            _ => return Err(Error::arg(format!("max_rows needs ≤ 2 axes, got {:?}", x.shape()))),
        };
        let d = x.data();
        let mut argmax = vec![0; c];
        let mut out = vec![0.0; c];
        for j in 0..c {
            let mut best = 0;
            for i in 1..r {
                if d[i * c + j] > d[best * c + j] {
                    best = i;
                }
            }
            argmax[j] = best;
            out[j] = d[best * c + j];
        }
        Ok(self.push(Tensor::vector(out), Op::MaxRows { src, argmax }, &[src]))
    }

    /// Valid multichannel convolution over positions.
    ///
    /// `input` is `n × m` where each row concatenates the per-channel vectors of
    /// one position; `filters` is `F × width × m`; `bias` has `F` entries. The
    /// result is `(n − width + 1) × F` with no activation applied.
    pub fn conv(&mut self, input: Var, filters: Var, bias: Var) -> Result<Var> {
        let (si, sf, sb) = (self.shape(input), self.shape(filters), self.shape(bias));
        if si.len() != 2 || sf.len() != 3 || sf[2] != si[1] {
            return Err(Error::dim("conv", si, sf));
        }
        let (n, m) = (si[0], si[1]);
        let (f, width) = (sf[0], sf[1]);
        if sb.iter().product::<usize>() != f {
            return Err(Error::dim("conv bias", sf, sb));
        }
        if width == 0 || width > n {
            return Err(Error::Config(format!(
                "filter width {width} does not fit a sequence of length {n}"
            )));
        }
        let out_len = n - width + 1;
        let span = width * m;
        let (x, w, b) = (self.data(input), self.data(filters), self.data(bias));
        let mut out = vec![0.0; out_len * f];
        gemm_windows(x, w, &mut out, out_len, span, m, f);
        for row in out.chunks_mut(f) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let y = Tensor::matrix(out_len, f, out)?;
        Ok(self.push(y, Op::Conv { input, filters, bias }, &[input, filters, bias]))
    }

    /// `−log(max(probs[label], PROB_FLOOR))`.
    pub fn nll(&mut self, probs: Var, label: usize) -> Result<Var> {
        let p = self.data(probs);
        if label >= p.len() {
            return Err(Error::arg(format!(
                "label {label} out of range for {} classes",
                p.len()
            )));
        }
        let loss = -p[label].max(PROB_FLOOR).ln();
        Ok(self.push(Tensor::scalar(loss), Op::Nll { probs, label }, &[probs]))
    }

    /// Gradients of the single-element `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::arg(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let scale = if self.fault == Some(node.op.kind()) { 1.5 } else { 1.0 };
            self.backprop(node, &g, scale, &mut grads);
            grads[idx] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node, g: &[f64], scale: f64, grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; contrib.len()]);
            for (s, c) in slot.iter_mut().zip(contrib) {
                *s += scale * c;
            }
        };
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g, self.data(b), &mut da, m, n, k);
                    send(a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(self.data(a), g, &mut db, k, m, n);
                    send(b, db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(a)[0], self.shape(a)[1]);
                send(a, transpose_data(g, c, r));
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (da_, db_) = (self.data(a), self.data(b));
                let (na, nb) = (da_.len(), db_.len());
                let at = |d: &[f64], n: usize, i: usize| d[if n == 1 { 0 } else { i }];
                let mut ga = vec![0.0; na];
                let mut gb = vec![0.0; nb];
                for (i, &gi) in g.iter().enumerate() {
                    let ia = if na == 1 { 0 } else { i };
                    let ib = if nb == 1 { 0 } else { i };
                    match node.op {
                        Op::Add(..) => {
                            ga[ia] += gi;
                            gb[ib] += gi;
                        }
                        Op::Sub(..) => {
                            ga[ia] += gi;
                            gb[ib] -= gi;
                        }
                        _ => {
                            ga[ia] += gi * at(db_, nb, i);
                            gb[ib] += gi * at(da_, na, i);
                        }
                    }
                }
                send(a, ga);
                send(b, gb);
            }
            Op::Scale(a, s) => send(a, g.iter().map(|v| v * s).collect()),
            Op::Tanh(a) => send(a, g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect()),
            Op::Sigmoid(a) => {
                send(a, g.iter().zip(y).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect())
            }
            Op::Relu(a) => {
                let x = self.data(a);
                send(a, g.iter().zip(x).map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 }).collect())
            }
            Op::Softmax(a) => {
                let dotp: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                send(a, g.iter().zip(y).map(|(gi, yi)| yi * (gi - dotp)).collect())
            }
            Op::SoftmaxCols(a) => {
                let (r, c) = (self.shape(a)[0], self.shape(a)[1]);
                let mut dx = vec![0.0; r * c];
                for j in 0..c {
                    let dotp: f64 = (0..r).map(|i| g[i * c + j] * y[i * c + j]).sum();
                    for i in 0..r {
                        dx[i * c + j] = y[i * c + j] * (g[i * c + j] - dotp);
                    }
                }
                send(a, dx)
            }
            Op::Concat { a, b, axis } => {
                let la = self.shape(a)[axis];
                let lb = self.shape(b)[axis];
                let sy = node.value.shape();
                send(a, slice_data(sy, g, axis, 0, la).expect("concat split").1);
                send(b, slice_data(sy, g, axis, la, lb).expect("concat split").1);
            }
            Op::Slice { src, axis, start } => {
                let ss = self.shape(src);
                let (outer, full, inner) = split_axis(ss, axis);
                let len = node.value.shape()[axis];
                let mut dx = vec![0.0; self.data(src).len()];
                for o in 0..outer {
                    let dst = o * full * inner + start * inner;
                    let srcoff = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&g[srcoff..srcoff + len * inner]);
                }
                send(src, dx)
            }
            Op::Reshape(a) => send(a, g.to_vec()),
            Op::Sum(a) => send(a, vec![g[0]; self.data(a).len()]),
            Op::SumAxis { src, axis } => {
                let (r, c) = (self.shape(src)[0], self.shape(src)[1]);
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = if axis == 0 { g[j] } else { g[i] };
                    }
                }
                send(src, dx)
            }
            Op::MaxRows { src, ref argmax } => {
                let c = argmax.len();
                let mut dx = vec![0.0; self.data(src).len()];
                for (j, &i) in argmax.iter().enumerate() {
                    dx[i * c + j] += g[j];
                }
                send(src, dx)
            }
            Op::Conv { input, filters, bias } => {
                let (n, m) = (self.shape(input)[0], self.shape(input)[1]);
                let (f, width) = (self.shape(filters)[0], self.shape(filters)[1]);
                let out_len = n - width + 1;
                let span = width * m;
                let (x, w) = (self.data(input), self.data(filters));
                if self.nodes[input.0].requires_grad {
                    let mut dx = vec![0.0; n * m];
                    for i in 0..out_len {
                        let win = &mut dx[i * m..i * m + span];
                        for fi in 0..f {
                            let gv = g[i * f + fi];
                            if gv == 0.0 {
                                continue;
                            }
                            for (d, &wv) in win.iter_mut().zip(&w[fi * span..(fi + 1) * span]) {
                                *d += gv * wv;
                            }
                        }
                    }
                    send(input, dx);
                }
                if self.nodes[filters.0].requires_grad {
                    let mut dw = vec![0.0; f * span];
                    for i in 0..out_len {
                        let win = &x[i * m..i * m + span];
                        for fi in 0..f {
                            let gv = g[i * f + fi];
                            if gv == 0.0 {
                                continue;
                            }
                            for (d, &xv) in dw[fi * span..(fi + 1) * span].iter_mut().zip(win) {
                                *d += gv * xv;
                            }
                        }
                    }
                    send(filters, dw);
                }
                let mut db = vec![0.0; f];
                for row in g.chunks(f) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                send(bias, db);
            }
            Op::Nll { probs, label } => {
                let p = self.data(probs);
                let mut dx = vec![0.0; p.len()];
                if p[label] > PROB_FLOOR {
                    dx[label] = -g[0] / p[label];
                }
                send(probs, dx)
            }
        }
    }
}

/// `out[i, f] += Σ_s w[f, s] · x[i·m + s]` for windows of length `span`.
fn gemm_windows(x: &[f64], w: &[f64], out: &mut [f64], out_len: usize, span: usize, m: usize, f: usize) {
    for i in 0..out_len {
        let win = &x[i * m..i * m + span];
        for fi in 0..f {
            out[i * f + fi] += crate::tensor::dot(win, &w[fi * span..(fi + 1) * span]);
        }
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
