//! Reverse-mode differentiation over a recorded graph of matrix operations.
//!
//! A [`Tape`] records every operation applied during a forward pass. Leaves
//! are either constants or [`Parameter`]s borrowed from a [`ParamSet`];
//! [`Tape::backward`] walks the record in reverse and accumulates
//! `∂loss/∂value` into each referenced parameter's `grad`.
//!
//! The op set is deliberately small: what the descriptor pipeline and its
//! losses use, plus two fused attention kernels whose backward pass
//! recomputes the softmax instead of storing it.

use std::collections::HashMap;

use rayon::prelude::*;

use super::matrix::{dot, Matrix};
use super::ops::{layer_norm_parts, softmax_in_place};
use crate::error::{shape_err, Result, SalsaError};

/// Index of a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Ordered, uniquely named collection of trainable parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(SalsaError::DuplicateId(name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value));
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Row groups that attend among themselves, listed per head.
///
/// Head `h` reads and writes columns `h*dh .. (h+1)*dh` where
/// `dh = cols / heads`.
#[derive(Clone, Debug, Default)]
pub struct AttentionLayout {
    pub head_groups: Vec<Vec<Vec<usize>>>,
}

impl AttentionLayout {
    pub fn heads(&self) -> usize {
        self.head_groups.len()
    }

    fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        let h = self.heads();
        if h == 0 || cols % h != 0 {
            return Err(shape_err(
                "grouped_attention",
                format!("{cols} columns not divisible into {h} heads"),
            ));
        }
        for groups in &self.head_groups {
            let mut seen = vec![false; rows];
            for g in groups {
                for &i in g {
                    if i >= rows || seen[i] {
                        return Err(shape_err(
                            "grouped_attention",
                            format!("row {i} out of range or assigned twice"),
                        ));
                    }
                    seen[i] = true;
                }
            }
            if seen.iter().any(|s| !s) {
                return Err(shape_err("grouped_attention", "row not assigned to a group"));
            }
        }
        Ok(())
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
        bias: Var,
    },
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    Sum(Var),
    RowSums(Var),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    GroupedAttention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
        scale: f64,
    },
    CrossAttention {
        q: Var,
        k: Var,
        v: Var,
        scale: f64,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let m = self.value(v);
        if m.shape() != (1, 1) {
            return Err(shape_err("scalar", format!("{:?} is not 1x1", m.shape())));
        }
        Ok(m.get(0, 0))
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(params.get(id).value.clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        if self.shape(row) != (1, ac) {
            return Err(shape_err(
                "add_row",
                format!("{:?} broadcast onto {ar}x{ac}", self.shape(row)),
            ));
        }
        let mut v = self.value(a).clone();
        let b = self.value(row).row(0).to_vec();
        for r in 0..ar {
            for (x, y) in v.row_mut(r).iter_mut().zip(&b) {
                *x += y;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let v = super::ops::softmax_rows(self.value(a))?;
        Ok(self.push(v, Op::SoftmaxRows(a)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (out, xhat, inv_std) =
            layer_norm_parts(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                xhat,
                inv_std,
                bias,
            },
        ))
    }

    /// Scales every row to unit L2 norm; zero rows pass through.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        let mut norms = Vec::with_capacity(v.rows());
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let n = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|a| *a /= n);
            }
            norms.push(n);
        }
        self.push(v, Op::L2NormalizeRows { x, norms })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a))
    }

    /// `n×c → n×1` row sums.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let data = (0..m.rows()).map(|r| m.row(r).iter().sum()).collect();
        let v = Matrix::from_vec(m.rows(), 1, data).expect("row sums shape");
        self.push(v, Op::RowSums(a))
    }

    pub fn gather_rows(&mut self, a: Var, indices: Vec<usize>) -> Result<Var> {
        let rows = self.shape(a).0;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(shape_err("gather_rows", format!("row {bad} of {rows}")));
        }
        let v = self.value(a).gather_rows(&indices);
        Ok(self.push(v, Op::GatherRows(a, indices)))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(a).clone().reshape(rows, cols)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// `x·w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Two-layer perceptron `relu(x·w1 + b1)·w2 + b2`.
    pub fn mlp2(&mut self, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
        let h = self.linear(x, w1, b1)?;
        let h = self.relu(h);
        self.linear(h, w2, b2)
    }

    /// Multi-head scaled dot-product self-attention restricted to row groups.
    pub fn grouped_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
        scale: f64,
    ) -> Result<Var> {
        let shape = self.shape(q);
        if self.shape(k) != shape || self.shape(v) != shape {
            return Err(shape_err("grouped_attention", "q/k/v shapes differ"));
        }
        layout.validate(shape.0, shape.1)?;
        let out = grouped_attention_forward(self.value(q), self.value(k), self.value(v), &layout, scale);
        Ok(self.push(
            out,
            Op::GroupedAttention {
                q,
                k,
                v,
                layout,
                scale,
            },
        ))
    }

    /// Single-head attention of every query row over all key rows:
    /// `softmax(scale · q·kᵀ)·v`.
    pub fn cross_attention(&mut self, q: Var, k: Var, v: Var, scale: f64) -> Result<Var> {
        let (qr, qc) = self.shape(q);
        let (kr, kc) = self.shape(k);
        if qc != kc || self.shape(v).0 != kr || kr == 0 {
            return Err(shape_err(
                "cross_attention",
                format!("q {qr}x{qc}, k {kr}x{kc}, v {:?}", self.shape(v)),
            ));
        }
        let out = cross_attention_forward(self.value(q), self.value(k), self.value(v), scale);
        Ok(self.push(out, Op::CrossAttention { q, k, v, scale }))
    }

    /// Gradients of a scalar node with respect to every node on the tape.
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Matrix>>> {
        if self.shape(loss) != (1, 1) {
            return Err(shape_err(
                "backward",
                format!("loss has shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b))?;
                    let gb = self.value(*a).t_matmul(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), "mul", |x, y| x * y)?;
                    let gb = g.zip_map(self.value(*a), "mul", |x, y| x * y)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, x) in gr.row_mut(0).iter_mut().zip(g.row(r)) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), "relu", |gx, x| if x > 0.0 { gx } else { 0.0 })?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let s = dot(yr, gr);
                        for (o, (yi, gi)) in ga.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yi * (gi - s);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    xhat,
                    inv_std,
                    bias,
                } => {
                    let gamma = self.value(*gain);
                    let c = xhat.cols();
                    let mut ggain = Matrix::zeros(1, c);
                    let mut gbias = Matrix::zeros(1, c);
                    let mut gx = Matrix::zeros(xhat.rows(), c);
                    for r in 0..xhat.rows() {
                        let gr = g.row(r);
                        let xr = xhat.row(r);
                        let mut dxhat = vec![0.0; c];
                        for j in 0..c {
                            ggain.row_mut(0)[j] += gr[j] * xr[j];
                            gbias.row_mut(0)[j] += gr[j];
                            dxhat[j] = gr[j] * gamma.get(0, j);
                        }
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum();
                        let n = c as f64;
                        for (j, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o = inv_std[r] / n * (n * dxhat[j] - sum_d - xr[j] * sum_dx);
                        }
                    }
                    accumulate(&mut grads, *gain, ggain);
                    accumulate(&mut grads, *bias, gbias);
                    accumulate(&mut grads, *x, gx);
                }
                Op::L2NormalizeRows { x, norms } => {
                    let y = &node.value;
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let n = norms[r];
                        let gr = g.row(r);
                        if n == 0.0 {
                            gx.row_mut(r).copy_from_slice(gr);
                            continue;
                        }
                        let yr = y.row(r);
                        let s = dot(yr, gr);
                        for (o, (gi, yi)) in gx.row_mut(r).iter_mut().zip(gr.iter().zip(yr)) {
                            *o = (gi - yi * s) / n;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::RowSums(a) => {
                    let (r, c) = self.shape(*a);
                    let ga = Matrix::from_fn(r, c, |i, _| g.get(i, 0));
                    accumulate(&mut grads, *a, ga);
                }
                Op::GatherRows(a, indices) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Matrix::zeros(r, c);
                    for (k, &i) in indices.iter().enumerate() {
                        for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Reshape(a) => {
                    let (r, c) = self.shape(*a);
                    accumulate(&mut grads, *a, g.reshape(r, c)?);
                }
                Op::GroupedAttention {
                    q,
                    k,
                    v,
                    layout,
                    scale,
                } => {
                    let (gq, gk, gv) = grouped_attention_backward(
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        &g,
                        layout,
                        *scale,
                    );
                    accumulate(&mut grads, *q, gq);
                    accumulate(&mut grads, *k, gk);
                    accumulate(&mut grads, *v, gv);
                }
                Op::CrossAttention { q, k, v, scale } => {
                    let (gq, gk, gv) = cross_attention_backward(
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        &g,
                        *scale,
                    );
                    accumulate(&mut grads, *q, gq);
                    accumulate(&mut grads, *k, gk);
                    accumulate(&mut grads, *v, gv);
                }
            }
        }
        Ok(grads)
    }

    /// Back-propagates from `loss` and adds the result into each parameter's `grad`.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (idx, g) in grads.into_iter().enumerate() {
            if let (Some(g), Op::Param(id)) = (g, &self.nodes[idx].op) {
                params.get_mut(*id).grad.add_assign(&g)?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing
            .add_assign(&g)
            .expect("gradient shape matches node shape"),
        slot @ None => *slot = Some(g),
    }
}

/// Value of grouped multi-head attention, no graph recording.
pub fn grouped_attention_forward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    layout: &AttentionLayout,
    scale: f64,
) -> Matrix {
    let cols = q.cols();
    let dh = cols / layout.heads();
    let mut out = Matrix::zeros(q.rows(), cols);
    let mut logits = Vec::new();
    for (h, groups) in layout.head_groups.iter().enumerate() {
        let c0 = h * dh;
        let c1 = c0 + dh;
        for group in groups {
            for &i in group {
                logits.clear();
                let qi = &q.row(i)[c0..c1];
                logits.extend(group.iter().map(|&j| scale * dot(qi, &k.row(j)[c0..c1])));
                softmax_in_place(&mut logits);
                let oi = &mut out.row_mut(i)[c0..c1];
                for (&j, &a) in group.iter().zip(&logits) {
                    for (o, x) in oi.iter_mut().zip(&v.row(j)[c0..c1]) {
                        *o += a * x;
                    }
                }
            }
        }
    }
    out
}

fn grouped_attention_backward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    g: &Matrix,
    layout: &AttentionLayout,
    scale: f64,
) -> (Matrix, Matrix, Matrix) {
    let (rows, cols) = q.shape();
    let dh = cols / layout.heads();
    let mut gq = Matrix::zeros(rows, cols);
    let mut gk = Matrix::zeros(rows, cols);
    let mut gv = Matrix::zeros(rows, cols);
    let mut a = Vec::new();
    let mut dl = Vec::new();
    for (h, groups) in layout.head_groups.iter().enumerate() {
        let c0 = h * dh;
        let c1 = c0 + dh;
        for group in groups {
            for &i in group {
                let qi = &q.row(i)[c0..c1];
                let gi = &g.row(i)[c0..c1];
                a.clear();
                a.extend(group.iter().map(|&j| scale * dot(qi, &k.row(j)[c0..c1])));
                softmax_in_place(&mut a);
                dl.clear();
                dl.extend(group.iter().map(|&j| dot(gi, &v.row(j)[c0..c1])));
                let s: f64 = a.iter().zip(&dl).map(|(x, y)| x * y).sum();
                for (t, &j) in group.iter().enumerate() {
                    let dlogit = a[t] * (dl[t] - s);
                    for (o, x) in gv.row_mut(j)[c0..c1].iter_mut().zip(gi) {
                        *o += a[t] * x;
                    }
                    if dlogit != 0.0 {
                        let kj = &k.row(j)[c0..c1];
                        for (o, x) in gq.row_mut(i)[c0..c1].iter_mut().zip(kj) {
                            *o += scale * dlogit * x;
                        }
                        for (o, x) in gk.row_mut(j)[c0..c1].iter_mut().zip(qi) {
                            *o += scale * dlogit * x;
                        }
                    }
                }
            }
        }
    }
    (gq, gk, gv)
}

/// Value of `softmax(scale · q·kᵀ)·v`, rows computed in parallel.
pub fn cross_attention_forward(q: &Matrix, k: &Matrix, v: &Matrix, scale: f64) -> Matrix {
    let vc = v.cols();
    let mut out = Matrix::zeros(q.rows(), vc);
    if vc == 0 {
        return out;
    }
    out.as_mut_slice()
        .par_chunks_mut(vc)
        .enumerate()
        .for_each(|(i, orow)| {
            let qi = q.row(i);
            let mut logits: Vec<f64> = (0..k.rows()).map(|j| scale * dot(qi, k.row(j))).collect();
            softmax_in_place(&mut logits);
            for (j, &a) in logits.iter().enumerate() {
                for (o, x) in orow.iter_mut().zip(v.row(j)) {
                    *o += a * x;
                }
            }
        });
    out
}

fn cross_attention_backward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    g: &Matrix,
    scale: f64,
) -> (Matrix, Matrix, Matrix) {
    let mut gq = Matrix::zeros(q.rows(), q.cols());
    let mut gk = Matrix::zeros(k.rows(), k.cols());
    let mut gv = Matrix::zeros(v.rows(), v.cols());
    let n = k.rows();
    let mut a = vec![0.0; n];
    let mut dl = vec![0.0; n];
    for i in 0..q.rows() {
        let qi = q.row(i);
        let gi = g.row(i);
        for j in 0..n {
            a[j] = scale * dot(qi, k.row(j));
        }
        softmax_in_place(&mut a);
        for j in 0..n {
            dl[j] = dot(gi, v.row(j));
        }
        let s: f64 = a.iter().zip(&dl).map(|(x, y)| x * y).sum();
        for j in 0..n {
            for (o, x) in gv.row_mut(j).iter_mut().zip(gi) {
                *o += a[j] * x;
            }
            let dlogit = scale * a[j] * (dl[j] - s);
            if dlogit != 0.0 {
                for (o, x) in gq.row_mut(i).iter_mut().zip(k.row(j)) {
                    *o += dlogit * x;
                }
                for (o, x) in gk.row_mut(j).iter_mut().zip(qi) {
                    *o += dlogit * x;
                }
            }
        }
    }
    (gq, gk, gv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut ps = ParamSet::new();
        let id = ps.add("p", Matrix::from_fn(3, 2, |r, c| (r + c) as f64)).unwrap();
        let mut t = Tape::new();
        let p = t.param(&ps, id);
        let s = t.sum(p);
        t.backward(s, &mut ps).unwrap();
        assert!(ps.get(id).grad.as_slice().iter().all(|&g| g == 1.0));
        // second call accumulates
        t.backward(s, &mut ps).unwrap();
        assert!(ps.get(id).grad.as_slice().iter().all(|&g| g == 2.0));
    }

    #[test]
    fn squared_norm_gradient_is_twice_value() {
        let mut ps = ParamSet::new();
        let value = Matrix::from_fn(2, 3, |r, c| r as f64 - 0.3 * c as f64);
        let id = ps.add("p", value.clone()).unwrap();
        let mut t = Tape::new();
        let p = t.param(&ps, id);
        let sq = t.mul(p, p).unwrap();
        let s = t.sum(sq);
        t.backward(s, &mut ps).unwrap();
        assert!(ps.get(id).grad.max_abs_diff(&value.scale(2.0)) < 1e-15);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::zeros(2, 2));
        assert!(t.gradients(c).is_err());
    }

    #[test]
    fn mlp2_hand_trace() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::filled(1, 1, 2.0));
        let w1 = t.constant(Matrix::filled(1, 1, 3.0));
        let b1 = t.constant(Matrix::filled(1, 1, -7.0));
        let w2 = t.constant(Matrix::filled(1, 1, 5.0));
        let b2 = t.constant(Matrix::filled(1, 1, 1.0));
        let y = t.mlp2(x, w1, b1, w2, b2).unwrap();
        assert_eq!(t.scalar(y).unwrap(), 1.0);
    }

    #[test]
    fn mlp2_zero_and_identity() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64));
        let w = t.constant(Matrix::identity(3));
        let b = t.constant(Matrix::zeros(1, 3));
        let y = t.mlp2(x, w, b, w, b).unwrap();
        assert_eq!(t.value(y), t.value(x));

        let z = t.constant(Matrix::zeros(4, 3));
        let y = t.mlp2(z, w, b, w, b).unwrap();
        assert!(t.value(y).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mlp2_shape_mismatch_errors() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros(2, 3));
        let w1 = t.constant(Matrix::zeros(4, 5));
        let b1 = t.constant(Matrix::zeros(1, 5));
        assert!(t.mlp2(x, w1, b1, w1, b1).is_err());
    }

    #[test]
    fn layout_validation() {
        let layout = AttentionLayout {
            head_groups: vec![vec![vec![0, 1], vec![1]]],
        };
        assert!(layout.validate(2, 4).is_err());
        let layout = AttentionLayout {
            head_groups: vec![vec![vec![0]], vec![vec![0]], vec![vec![0]]],
        };
        assert!(layout.validate(1, 4).is_err());
    }
}
