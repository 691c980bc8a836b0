//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Each operation evaluates eagerly and records itself on the tape; shapes are
//! checked when the node is created. [`Graph::backward`] walks the tape in
//! reverse in a fixed order, so gradients are bitwise reproducible.

use std::f64::consts::{PI, SQRT_2};

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    MulBias(Var, Var),
    Add(Var, Var),
    AddTiled(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softplus(Var),
    Sum(Var),
    SumSq(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Softmax(Var),
    Attention { q: Var, k: Var, v: Var, group: usize, heads: usize, probs: Vec<f64> },
    Gather { x: Var, index: Vec<usize> },
    MeanPool { x: Var, group: usize },
    Concat(Var, Var),
    MixtureNll { logits: Var, mu: Var, sigma: Var, target: Vec<f64>, scale: f64, floor: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    label: String,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of a graph.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.0[v.0].as_ref()
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax in place.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// Map raw head outputs of one row to mixture parameters: softmax weights,
/// `μ = scale·raw`, `σ = scale·softplus(raw) + floor`.
pub fn head_transform(
    logits: &[f64],
    mu: &[f64],
    sigma: &[f64],
    scale: f64,
    floor: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut w = logits.to_vec();
    softmax_in_place(&mut w);
    (
        w,
        mu.iter().map(|m| m * scale).collect(),
        sigma.iter().map(|s| scale * softplus(*s) + floor).collect(),
    )
}

/// Per-component log densities plus log of the mixture density.
fn mixture_terms(w: &[f64], mu: &[f64], sd: &[f64], y: f64, out: &mut Vec<f64>) -> f64 {
    out.clear();
    let half_ln_2pi = 0.5 * (2.0 * PI).ln();
    for j in 0..w.len() {
        let z = (y - mu[j]) / sd[j];
        out.push(w[j].ln() - half_ln_2pi - sd[j].ln() - 0.5 * z * z);
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + out.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn shape_str(t: &Tensor) -> String {
    format!("{}×{}", t.rows, t.cols)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn label(&self, v: Var) -> &str {
        &self.nodes[v.0].label
    }

    fn push(&mut self, label: impl Into<String>, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            label: label.into(),
        });
        Var(self.nodes.len() - 1)
    }

    fn mismatch(&self, op: &str, a: Var, b: Var) -> Error {
        Error::Shape(format!(
            "{op}: {} [{}] vs {} [{}]",
            self.label(a),
            shape_str(self.value(a)),
            self.label(b),
            shape_str(self.value(b))
        ))
    }

    pub fn input(&mut self, label: &str, value: Tensor) -> Var {
        self.push(label, value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.name(id), store.get(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols != y.rows {
            return Err(self.mismatch("matmul", a, b));
        }
        let out = x.matmul(y);
        Ok(self.push(format!("matmul#{}", self.len()), out, Op::MatMul(a, b)))
    }

    fn row_broadcast(&mut self, name: &str, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        if y.rows != 1 || y.cols != x.cols {
            return Err(self.mismatch(name, a, b));
        }
        let mut out = x.clone();
        for r in 0..out.rows {
            for (o, bb) in out.row_mut(r).iter_mut().zip(&y.data) {
                *o = f(*o, *bb);
            }
        }
        Ok(out)
    }

    /// `a + b` with `b` a `1 × cols` row broadcast over the rows of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.row_broadcast("add_bias", a, b, |x, y| x + y)?;
        Ok(self.push(format!("add_bias#{}", self.len()), out, Op::AddBias(a, b)))
    }

    /// `a ⊙ b` with `b` a `1 × cols` row broadcast over the rows of `a`.
    pub fn mul_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.row_broadcast("mul_bias", a, b, |x, y| x * y)?;
        Ok(self.push(format!("mul_bias#{}", self.len()), out, Op::MulBias(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(self.mismatch("add", a, b));
        }
        let mut out = x.clone();
        out.add_assign(y);
        Ok(self.push(format!("add#{}", self.len()), out, Op::Add(a, b)))
    }

    /// `a + b` where `b` repeats down the rows of `a` (`a.rows` a multiple of `b.rows`).
    pub fn add_tiled(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols != y.cols || y.rows == 0 || x.rows % y.rows != 0 {
            return Err(self.mismatch("add_tiled", a, b));
        }
        let mut out = x.clone();
        for chunk in out.data.chunks_mut(y.data.len()) {
            for (o, t) in chunk.iter_mut().zip(&y.data) {
                *o += t;
            }
        }
        Ok(self.push(format!("add_tiled#{}", self.len()), out, Op::AddTiled(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(format!("scale#{}", self.len()), out, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(format!("gelu#{}", self.len()), out, Op::Gelu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(format!("softplus#{}", self.len()), out, Op::Softplus(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(format!("sum#{}", self.len()), Tensor::filled(1, 1, s), Op::Sum(a))
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_sq();
        self.push(format!("sum_sq#{}", self.len()), Tensor::filled(1, 1, s), Op::SumSq(a))
    }

    /// Per-row normalisation to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows);
        let n = x.cols as f64;
        for r in 0..x.rows {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(format!("layer_norm#{}", self.len()), out, Op::LayerNorm { x: a, inv_std })
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        self.push(format!("softmax#{}", self.len()), out, Op::Softmax(a))
    }

    /// Multi-head scaled dot-product attention within consecutive groups of
    /// `group` rows. Returns the concatenated head outputs (no projection).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, group: usize, heads: usize) -> Result<Var> {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        if qt.shape() != kt.shape() {
            return Err(self.mismatch("attention", q, k));
        }
        if qt.shape() != vt.shape() {
            return Err(self.mismatch("attention", q, v));
        }
        let d = qt.cols;
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("width {d} not divisible by {heads} heads")));
        }
        if group == 0 || qt.rows % group != 0 {
            return Err(Error::Shape(format!(
                "attention: {} rows not a multiple of group {group}",
                qt.rows
            )));
        }
        let (dh, l, groups) = (d / heads, group, qt.rows / group);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; groups * heads * l * l];
        let mut out = Tensor::zeros(qt.rows, d);
        for g in 0..groups {
            for h in 0..heads {
                let base = (g * heads + h) * l * l;
                let cols = h * dh..(h + 1) * dh;
                for i in 0..l {
                    let qi = &qt.row(g * l + i)[cols.clone()];
                    let p = &mut probs[base + i * l..base + (i + 1) * l];
                    for (j, pj) in p.iter_mut().enumerate() {
                        let kj = &kt.row(g * l + j)[cols.clone()];
                        *pj = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                    }
                    softmax_in_place(p);
                    let o = &mut out.row_mut(g * l + i)[cols.clone()];
                    for (j, pj) in p.iter().enumerate() {
                        let vj = &vt.row(g * l + j)[cols.clone()];
                        for (oc, vc) in o.iter_mut().zip(vj) {
                            *oc += pj * vc;
                        }
                    }
                }
            }
        }
        Ok(self.push(
            format!("attention#{}", self.len()),
            out,
            Op::Attention { q, k, v, group, heads, probs },
        ))
    }

    /// Attention weights recorded by an attention node, indexed
    /// `[group][head][query][key]` in row-major order.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Row `i` of the output is row `index[i]` of `a`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        if let Some(bad) = index.iter().find(|&&i| i >= x.rows) {
            return Err(Error::Shape(format!(
                "gather: row {bad} out of range for {} [{}]",
                self.label(a),
                shape_str(x)
            )));
        }
        let mut data = Vec::with_capacity(index.len() * x.cols);
        for &i in &index {
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor::from_vec(index.len(), x.cols, data)?;
        Ok(self.push(format!("gather#{}", self.len()), out, Op::Gather { x: a, index }))
    }

    /// Mean over consecutive groups of `group` rows.
    pub fn mean_pool(&mut self, a: Var, group: usize) -> Result<Var> {
        let x = self.value(a);
        if group == 0 || !x.rows.is_multiple_of(group) {
            return Err(Error::Shape(format!(
                "mean_pool: {} [{}] not divisible into groups of {group}",
                self.label(a),
                shape_str(x)
            )));
        }
        let mut out = Tensor::zeros(x.rows / group, x.cols);
        for r in 0..x.rows {
            for (o, v) in out.row_mut(r / group).iter_mut().zip(x.row(r)) {
                *o += v / group as f64;
            }
        }
        Ok(self.push(format!("mean_pool#{}", self.len()), out, Op::MeanPool { x: a, group }))
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows != y.rows {
            return Err(self.mismatch("concat", a, b));
        }
        let mut data = Vec::with_capacity(x.len() + y.len());
        for r in 0..x.rows {
            data.extend_from_slice(x.row(r));
            data.extend_from_slice(y.row(r));
        }
        let out = Tensor::from_vec(x.rows, x.cols + y.cols, data)?;
        Ok(self.push(format!("concat#{}", self.len()), out, Op::Concat(a, b)))
    }

    /// Mean negative log-likelihood of `target` under the mixtures given by
    /// raw head outputs (see [`head_transform`]).
    pub fn mixture_nll(
        &mut self,
        logits: Var,
        mu: Var,
        sigma: Var,
        target: Vec<f64>,
        scale: f64,
        floor: f64,
    ) -> Result<Var> {
        let (l, m, s) = (self.value(logits), self.value(mu), self.value(sigma));
        if l.shape() != m.shape() {
            return Err(self.mismatch("mixture_nll", logits, mu));
        }
        if l.shape() != s.shape() {
            return Err(self.mismatch("mixture_nll", logits, sigma));
        }
        if target.len() != l.rows || l.rows == 0 {
            return Err(Error::Shape(format!(
                "mixture_nll: {} targets for {} rows",
                target.len(),
                l.rows
            )));
        }
        let mut terms = Vec::new();
        let mut total = 0.0;
        for (r, y) in target.iter().enumerate() {
            let (w, mu, sd) = head_transform(l.row(r), m.row(r), s.row(r), scale, floor);
            total -= mixture_terms(&w, &mu, &sd, *y, &mut terms);
        }
        let out = Tensor::filled(1, 1, total / l.rows as f64);
        Ok(self.push(
            format!("mixture_nll#{}", self.len()),
            out,
            Op::MixtureNll { logits, mu, sigma, target, scale, floor },
        ))
    }

    /// Reverse pass from a `1 × 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward: {} is {} (expected a scalar)",
                self.label(loss),
                shape_str(self.value(loss))
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients(grads))
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot => *slot = Some(t),
        };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let mut ga = Tensor::zeros(x.rows, x.cols);
                gemm(false, g, true, y, &mut ga);
                let mut gb = Tensor::zeros(y.rows, y.cols);
                gemm(true, x, false, g, &mut gb);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::AddBias(a, b) => {
                let mut gb = Tensor::zeros(1, g.cols);
                for r in 0..g.rows {
                    for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*a, g.clone());
                acc(*b, gb);
            }
            Op::MulBias(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let mut ga = g.clone();
                let mut gb = Tensor::zeros(1, g.cols);
                for r in 0..g.rows {
                    for c in 0..g.cols {
                        ga.data[r * g.cols + c] *= y.data[c];
                        gb.data[c] += g.get(r, c) * x.get(r, c);
                    }
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddTiled(a, b) => {
                let y = val(*b);
                let mut gb = Tensor::zeros(y.rows, y.cols);
                for chunk in g.data.chunks(y.data.len()) {
                    for (o, v) in gb.data.iter_mut().zip(chunk) {
                        *o += v;
                    }
                }
                acc(*a, g.clone());
                acc(*b, gb);
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::Gelu(a) => {
                let x = val(*a);
                let mut ga = g.clone();
                for (o, xi) in ga.data.iter_mut().zip(&x.data) {
                    *o *= gelu_grad(*xi);
                }
                acc(*a, ga);
            }
            Op::Softplus(a) => {
                let x = val(*a);
                let mut ga = g.clone();
                for (o, xi) in ga.data.iter_mut().zip(&x.data) {
                    *o *= sigmoid(*xi);
                }
                acc(*a, ga);
            }
            Op::Sum(a) => {
                let x = val(*a);
                acc(*a, Tensor::filled(x.rows, x.cols, g.data[0]));
            }
            Op::SumSq(a) => {
                let s = 2.0 * g.data[0];
                acc(*a, val(*a).map(|x| s * x));
            }
            Op::LayerNorm { x, inv_std } => {
                let y = &node.value;
                let n = y.cols as f64;
                let mut gx = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o = inv_std[r] * (gr[c] - mean_g - yr[c] * mean_gy);
                    }
                }
                acc(*x, gx);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut ga = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let dot = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>();
                    for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                        *o = yr[c] * (gr[c] - dot);
                    }
                }
                acc(*a, ga);
            }
            Op::Attention { q, k, v, group, heads, probs } => {
                let (qt, kt, vt) = (val(*q), val(*k), val(*v));
                let (d, l) = (qt.cols, *group);
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut gq = Tensor::zeros(qt.rows, d);
                let mut gk = Tensor::zeros(qt.rows, d);
                let mut gv = Tensor::zeros(qt.rows, d);
                let mut dp = vec![0.0; l];
                for gi in 0..qt.rows / l {
                    for h in 0..*heads {
                        let base = (gi * heads + h) * l * l;
                        let cols = h * dh..(h + 1) * dh;
                        for i in 0..l {
                            let p = &probs[base + i * l..base + (i + 1) * l];
                            let go = &g.row(gi * l + i)[cols.clone()];
                            for j in 0..l {
                                let vj = &vt.row(gi * l + j)[cols.clone()];
                                dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                                for (o, gc) in gv.row_mut(gi * l + j)[cols.clone()].iter_mut().zip(go) {
                                    *o += p[j] * gc;
                                }
                            }
                            let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                            for j in 0..l {
                                let ds = p[j] * (dp[j] - dot) * scale;
                                let kj = &kt.row(gi * l + j)[cols.clone()];
                                for (o, kc) in gq.row_mut(gi * l + i)[cols.clone()].iter_mut().zip(kj) {
                                    *o += ds * kc;
                                }
                                let qi = &qt.row(gi * l + i)[cols.clone()];
                                for (o, qc) in gk.row_mut(gi * l + j)[cols.clone()].iter_mut().zip(qi) {
                                    *o += ds * qc;
                                }
                            }
                        }
                    }
                }
                acc(*q, gq);
                acc(*k, gk);
                acc(*v, gv);
            }
            Op::Gather { x, index } => {
                let xt = val(*x);
                let mut gx = Tensor::zeros(xt.rows, xt.cols);
                for (r, &i) in index.iter().enumerate() {
                    for (o, v) in gx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*x, gx);
            }
            Op::MeanPool { x, group } => {
                let xt = val(*x);
                let mut gx = Tensor::zeros(xt.rows, xt.cols);
                for r in 0..xt.rows {
                    for (o, v) in gx.row_mut(r).iter_mut().zip(g.row(r / group)) {
                        *o = v / *group as f64;
                    }
                }
                acc(*x, gx);
            }
            Op::Concat(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let mut ga = Tensor::zeros(x.rows, x.cols);
                let mut gb = Tensor::zeros(y.rows, y.cols);
                for r in 0..g.rows {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..x.cols]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[x.cols..]);
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::MixtureNll { logits, mu, sigma, target, scale, floor } => {
                let (lt, mt, st) = (val(*logits), val(*mu), val(*sigma));
                let n = lt.cols;
                let coef = g.data[0] / lt.rows as f64;
                let mut gl = Tensor::zeros(lt.rows, n);
                let mut gm = Tensor::zeros(lt.rows, n);
                let mut gs = Tensor::zeros(lt.rows, n);
                let mut terms = Vec::new();
                for (r, y) in target.iter().enumerate() {
                    let (w, m, sd) = head_transform(lt.row(r), mt.row(r), st.row(r), *scale, *floor);
                    let log_p = mixture_terms(&w, &m, &sd, *y, &mut terms);
                    for j in 0..n {
                        let resp = (terms[j] - log_p).exp();
                        let z = (y - m[j]) / sd[j];
                        gl.data[r * n + j] = coef * (w[j] - resp);
                        gm.data[r * n + j] = -coef * resp * z / sd[j] * scale;
                        gs.data[r * n + j] =
                            coef * resp * (1.0 - z * z) / sd[j] * scale * sigmoid(st.get(r, j));
                    }
                }
                acc(*logits, gl);
                acc(*mu, gm);
                acc(*sigma, gs);
            }
        }
    }

    /// Gradients of the parameters in `store`, summed over every use in the
    /// graph; zero for parameters that were not used.
    pub fn param_gradients(&self, grads: &Gradients, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.rows, t.cols))
            .collect();
        for (node, g) in self.nodes.iter().zip(&grads.0) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                out[id.index()].add_assign(g);
            }
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    pub(crate) fn random_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Compare analytic gradients of every input of `build` with central
    /// differences; returns the worst relative error.
    pub(crate) fn check_inputs(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
        let eval = |ins: &[Tensor]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|t| g.input("x", t.clone())).collect();
            let out = build(&mut g, &vars);
            (g, vars, out)
        };
        let (g, vars, out) = eval(inputs);
        let grads = g.backward(out).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (k, t) in inputs.iter().enumerate() {
            let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.rows, t.cols));
            for i in 0..t.len() {
                let mut plus = inputs.to_vec();
                plus[k].data[i] += h;
                let mut minus = inputs.to_vec();
                minus[k].data[i] -= h;
                let fp = { let (g, _, o) = eval(&plus); g.value(o).data[0] };
                let fm = { let (g, _, o) = eval(&minus); g.value(o).data[0] };
                let numeric = (fp - fm) / (2.0 * h);
                let a = analytic.data[i];
                let err = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(1e-3));
                worst = worst.max(err);
            }
        }
        worst
    }

    /// Reduce a tensor to a scalar with fixed random weights so every output
    /// entry gets a distinct upstream gradient.
    pub(crate) fn project(g: &mut Graph, v: Var, salt: u64) -> Var {
        let t = g.value(v).clone();
        let mut rng = seed::rng(salt);
        let w = random_tensor(t.cols, 1, &mut rng);
        let w = g.input("proj", w);
        let y = g.matmul(v, w).unwrap();
        let y = g.gelu(y);
        g.sum(y)
    }

    #[test]
    fn sum_of_squares_hand_derivative() {
        let mut g = Graph::new();
        let x = g.input("x", Tensor::row_vector(vec![1.0, 2.0]));
        let y = g.sum_sq(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data, vec![2.0, 4.0]);
    }

    #[test]
    fn constant_loss_zero_gradient() {
        let mut g = Graph::new();
        let x = g.input("x", Tensor::row_vector(vec![1.0, 2.0]));
        let c = g.input("c", Tensor::filled(1, 1, 3.0));
        let _unused = g.scale(x, 2.0);
        let grads = g.backward(c).unwrap();
        assert!(grads.wrt(x).is_none());
    }

    #[test]
    fn shape_errors_name_tensors() {
        let mut g = Graph::new();
        let a = g.input("features", Tensor::zeros(2, 3));
        let b = g.input("weights", Tensor::zeros(4, 2));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("features") && err.contains("weights"), "{err}");
    }

    #[test]
    fn elementwise_and_broadcast_gradients() {
        let mut rng = seed::rng(1);
        let ins = vec![random_tensor(4, 3, &mut rng), random_tensor(1, 3, &mut rng), random_tensor(2, 3, &mut rng)];
        let err = check_inputs(&ins, |g, v| {
            let a = g.add_bias(v[0], v[1]).unwrap();
            let b = g.mul_bias(a, v[1]).unwrap();
            let c = g.add_tiled(b, v[2]).unwrap();
            let d = g.softplus(c);
            let e = g.gelu(d);
            let f = g.scale(e, 0.7);
            let h = g.add(f, v[0]).unwrap();
            project(g, h, 9)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn matmul_gradient() {
        let mut rng = seed::rng(2);
        let ins = vec![random_tensor(3, 4, &mut rng), random_tensor(4, 2, &mut rng)];
        let err = check_inputs(&ins, |g, v| {
            let m = g.matmul(v[0], v[1]).unwrap();
            project(g, m, 3)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn layer_norm_properties_and_gradient() {
        let mut rng = seed::rng(3);
        let x = random_tensor(5, 6, &mut rng);
        let mut g = Graph::new();
        let v = g.input("x", x.clone());
        let y = g.layer_norm(v);
        for r in 0..5 {
            let row = g.value(y).row(r);
            let mean = row.iter().sum::<f64>() / 6.0;
            let var = row.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
        let err = check_inputs(&[x], |g, v| {
            let y = g.layer_norm(v[0]);
            project(g, y, 4)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn softmax_properties_and_gradient() {
        let mut rng = seed::rng(5);
        let x = random_tensor(4, 5, &mut rng).map(|v| v * 10.0);
        let mut g = Graph::new();
        let v = g.input("x", x.clone());
        let y = g.softmax(v);
        for r in 0..4 {
            let row = g.value(y).row(r);
            assert!(row.iter().all(|p| *p > 0.0 && *p < 1.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let err = check_inputs(&[x], |g, v| {
            let y = g.softmax(v[0]);
            project(g, y, 6)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn attention_examples() {
        // single position: weight exactly 1, output = value
        let mut g = Graph::new();
        let q = g.input("q", Tensor::row_vector(vec![0.3, -1.0, 2.0, 0.5]));
        let k = g.input("k", Tensor::row_vector(vec![1.0, 1.0, -1.0, 0.0]));
        let v = g.input("v", Tensor::row_vector(vec![4.0, 5.0, 6.0, 7.0]));
        let o = g.attention(q, k, v, 1, 2).unwrap();
        assert_eq!(g.value(o).data, vec![4.0, 5.0, 6.0, 7.0]);
        assert!(g.attention_weights(o).unwrap().iter().all(|p| *p == 1.0));

        // identical keys: uniform weights
        let mut rng = seed::rng(7);
        let mut g = Graph::new();
        let q = g.input("q", random_tensor(3, 4, &mut rng));
        let k = g.input("k", Tensor::from_vec(3, 4, [0.2, -0.4, 1.0, 0.1].repeat(3)).unwrap());
        let v = g.input("v", random_tensor(3, 4, &mut rng));
        let o = g.attention(q, k, v, 3, 2).unwrap();
        for p in g.attention_weights(o).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(matches!(g.attention(q, k, v, 3, 3), Err(Error::Config(_))));
    }

    #[test]
    fn attention_gradient() {
        let mut rng = seed::rng(8);
        let ins = vec![random_tensor(6, 4, &mut rng), random_tensor(6, 4, &mut rng), random_tensor(6, 4, &mut rng)];
        let err = check_inputs(&ins, |g, v| {
            let o = g.attention(v[0], v[1], v[2], 3, 2).unwrap();
            project(g, o, 10)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn gather_pool_concat_gradients() {
        let mut rng = seed::rng(11);
        let ins = vec![random_tensor(4, 3, &mut rng), random_tensor(2, 2, &mut rng)];
        let err = check_inputs(&ins, |g, v| {
            let a = g.gather(v[0], vec![3, 0, 0, 2]).unwrap();
            let p = g.mean_pool(a, 2).unwrap();
            let c = g.concat(p, v[1]).unwrap();
            project(g, c, 12)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn mixture_nll_value_and_gradient() {
        let mut g = Graph::new();
        let l = g.input("l", Tensor::row_vector(vec![0.0]));
        let m = g.input("m", Tensor::row_vector(vec![0.0]));
        let s = g.input("s", Tensor::row_vector(vec![1.0f64.exp_m1().ln()]));
        let nll = g.mixture_nll(l, m, s, vec![0.0], 1.0, 0.0).unwrap();
        // standard normal at 0
        assert!((g.value(nll).data[0] - 0.5 * (2.0 * PI).ln()).abs() < 1e-12);

        let mut rng = seed::rng(13);
        let ins = vec![random_tensor(5, 3, &mut rng), random_tensor(5, 3, &mut rng), random_tensor(5, 3, &mut rng)];
        let target: Vec<f64> = (0..5).map(|_| rng.random_range(-0.05..0.05)).collect();
        let err = check_inputs(&ins, |g, v| g.mixture_nll(v[0], v[1], v[2], target.clone(), 0.02, 1e-4).unwrap());
        assert!(err < 1e-6, "{err}");
    }
}
