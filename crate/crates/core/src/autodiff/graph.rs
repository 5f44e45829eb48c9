//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated. Parameters are
//! borrowed rather than copied, so building a graph over a large network
//! costs only the activations.

use std::borrow::Cow;

use super::kernels::{self, ConvGeom};
use super::{AutodiffError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Deliberate backward-pass defects for validating the gradient checker.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Uses `1 - y` instead of `1 - y^2` as the tanh derivative.
    TanhGrad,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Tanh(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    Reshape(Var),
    ConcatCols(Var, Var),
    MaskedSoftmax {
        x: Var,
        mask: Vec<bool>,
    },
    MaskedLogSoftmax {
        x: Var,
        mask: Vec<bool>,
    },
    MaskedEntropy {
        x: Var,
        mask: Vec<bool>,
        probs: Vec<f64>,
        logp: Vec<f64>,
    },
    GatherCols {
        x: Var,
        idx: Vec<usize>,
    },
    Exp(Var),
    Log(Var),
    Square(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Minimum(Var, Var),
    Sum(Var),
    Mean(Var),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    fault: Option<Fault>,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Moves the gradient out, leaving `None`.
    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn mismatch(msg: String) -> AutodiffError {
    AutodiffError::ShapeMismatch(msg)
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph::default()
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
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

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// Owned leaf whose gradient is tracked.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    /// Borrowed trainable parameter.
    pub fn param(&mut self, t: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(mismatch(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.derived(out, op, &[x])
    }

    fn zip(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
        what: &str,
    ) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, what)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        Ok(self.derived(out, op, &[a, b]))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(mismatch(format!("matmul inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(t, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds a `[n]` bias to every row of `[m, n]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(b).shape() != [n] {
            return Err(mismatch(format!(
                "bias {:?} for width {n}",
                self.value(b).shape()
            )));
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(t, Op::AddBias(x, b), &[x, b]))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    /// `x: [N, C, H, W]`, `w: [O, C, k, k]`, `b: [O]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, AutodiffError> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let (&[n, c, h, wd], &[o, c2, k, k2]) = (xs.as_slice(), ws.as_slice()) else {
            return Err(mismatch(format!(
                "conv2d expects rank-4 input and kernel, got {xs:?} and {ws:?}"
            )));
        };
        if c != c2 || k != k2 || self.value(b).shape() != [o] {
            return Err(mismatch(format!(
                "conv2d input {xs:?}, kernel {ws:?}, bias {:?}",
                self.value(b).shape()
            )));
        }
        let geom = ConvGeom {
            batch: n,
            in_ch: c,
            h,
            w: wd,
            out_ch: o,
            k,
            stride,
            pad,
        };
        let (oh, ow) = geom.out_hw().ok_or_else(|| {
            mismatch(format!(
                "conv2d kernel {k} larger than padded input {h}x{wd}"
            ))
        })?;
        let mut out = vec![0.0; n * o * oh * ow];
        kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &mut out,
        );
        let t = Tensor::new(vec![n, o, oh, ow], out)?;
        Ok(self.derived(t, Op::Conv2d { x, w, b, geom }, &[x, w, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.derived(t, Op::Reshape(x), &[x]))
    }

    /// `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.value(x).shape();
        let n = *s
            .first()
            .ok_or_else(|| mismatch("flatten of rank-0 tensor".into()))?;
        let rest = s[1..].iter().product();
        self.reshape(x, vec![n, rest])
    }

    /// `[m, p] ++ [m, q] -> [m, p + q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, p) = self.value(a).dims2()?;
        let (m2, q) = self.value(b).dims2()?;
        if m != m2 {
            return Err(mismatch(format!("concat rows {m} vs {m2}")));
        }
        let mut out = Vec::with_capacity(m * (p + q));
        for (ra, rb) in self
            .value(a)
            .data()
            .chunks(p.max(1))
            .zip(self.value(b).data().chunks(q.max(1)))
        {
            out.extend_from_slice(&ra[..p]);
            out.extend_from_slice(&rb[..q]);
        }
        let t = Tensor::new(vec![m, p + q], out)?;
        Ok(self.derived(t, Op::ConcatCols(a, b), &[a, b]))
    }

    fn check_mask(&self, x: Var, mask: &[bool]) -> Result<(usize, usize), AutodiffError> {
        let (m, n) = self.value(x).dims2()?;
        if mask.len() != m * n {
            return Err(mismatch(format!("mask of {} for {m}x{n}", mask.len())));
        }
        if mask.chunks(n.max(1)).any(|row| !row.iter().any(|&b| b)) {
            return Err(AutodiffError::AllMasked);
        }
        Ok((m, n))
    }

    pub fn masked_softmax(&mut self, x: Var, mask: Vec<bool>) -> Result<Var, AutodiffError> {
        let (m, n) = self.check_mask(x, &mask)?;
        let mut out = vec![0.0; m * n];
        kernels::masked_softmax_rows(self.value(x).data(), &mask, n, &mut out);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(t, Op::MaskedSoftmax { x, mask }, &[x]))
    }

    /// Masked entries hold `-inf`; only gather unmasked columns from it.
    pub fn masked_log_softmax(&mut self, x: Var, mask: Vec<bool>) -> Result<Var, AutodiffError> {
        let (m, n) = self.check_mask(x, &mask)?;
        let mut out = vec![0.0; m * n];
        kernels::masked_log_softmax_rows(self.value(x).data(), &mask, n, &mut out);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(t, Op::MaskedLogSoftmax { x, mask }, &[x]))
    }

    /// Per-row entropy of the masked softmax of `x`, shape `[m]`.
    pub fn masked_entropy(&mut self, x: Var, mask: Vec<bool>) -> Result<Var, AutodiffError> {
        let (m, n) = self.check_mask(x, &mask)?;
        let mut probs = vec![0.0; m * n];
        let mut logp = vec![0.0; m * n];
        kernels::masked_softmax_rows(self.value(x).data(), &mask, n, &mut probs);
        kernels::masked_log_softmax_rows(self.value(x).data(), &mask, n, &mut logp);
        let ent: Vec<f64> = probs
            .chunks(n)
            .zip(logp.chunks(n))
            .zip(mask.chunks(n))
            .map(|((p, l), mk)| {
                -p.iter()
                    .zip(l)
                    .zip(mk)
                    .filter(|(_, &ok)| ok)
                    .map(|((p, l), _)| p * l)
                    .sum::<f64>()
            })
            .collect();
        let t = Tensor::new(vec![m], ent)?;
        Ok(self.derived(
            t,
            Op::MaskedEntropy {
                x,
                mask,
                probs,
                logp,
            },
            &[x],
        ))
    }

    /// Picks column `idx[i]` from row `i`, giving `[m]`.
    pub fn gather_cols(&mut self, x: Var, idx: Vec<usize>) -> Result<Var, AutodiffError> {
        let (m, n) = self.value(x).dims2()?;
        if idx.len() != m || idx.iter().any(|&i| i >= n) {
            return Err(mismatch(format!(
                "gather of {} indices from {m}x{n}",
                idx.len()
            )));
        }
        let data = self.value(x).data();
        let out = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| data[r * n + c])
            .collect();
        let t = Tensor::new(vec![m], out)?;
        Ok(self.derived(t, Op::GatherCols { x, idx }, &[x]))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, f64::ln, Op::Log(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |v| v * v, Op::Square(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip(a, b, f64::min, Op::Minimum(a, b), "minimum")
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.derived(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        self.derived(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss(
                self.value(loss).shape().to_vec(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn unary(
        &self,
        grads: &mut [Option<Vec<f64>>],
        x: Var,
        g: &[f64],
        f: impl Fn(usize, f64) -> f64,
    ) {
        if let Some(dx) = self.acc(grads, x) {
            for (i, (d, gi)) in dx.iter_mut().zip(g).enumerate() {
                *d += f(i, *gi);
            }
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.nodes[i].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("checked");
                let n = self.value(*b).shape()[1];
                if let Some(da) = self.acc(grads, *a) {
                    kernels::matmul_grad_a(g, self.value(*b).data(), da, m, k, n);
                }
                if let Some(db) = self.acc(grads, *b) {
                    kernels::matmul_grad_b(self.value(*a).data(), g, db, m, k, n);
                }
            }
            Op::AddBias(x, b) => {
                let n = self.value(*b).len();
                self.unary(grads, *x, g, |_, gi| gi);
                if let Some(db) = self.acc(grads, *b) {
                    for row in g.chunks(n) {
                        for (d, gi) in db.iter_mut().zip(row) {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                let faulty = self.fault == Some(Fault::TanhGrad);
                self.unary(grads, *x, g, |j, gi| {
                    let y = out[j];
                    if faulty {
                        gi * (1.0 - y)
                    } else {
                        gi * (1.0 - y * y)
                    }
                });
            }
            Op::Conv2d { x, w, b, geom } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut dx = self.acc(grads, *x).map(std::mem::take);
                let mut dw = self.acc(grads, *w).map(std::mem::take);
                let mut db = self.acc(grads, *b).map(std::mem::take);
                kernels::conv2d_backward(
                    geom,
                    xv,
                    wv,
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (v, d) in [(*x, dx), (*w, dw), (*b, db)] {
                    if let Some(d) = d {
                        grads[v.0] = Some(d);
                    }
                }
            }
            Op::Reshape(x) => self.unary(grads, *x, g, |_, gi| gi),
            Op::ConcatCols(a, b) => {
                let p = self.value(*a).shape()[1];
                let q = self.value(*b).shape()[1];
                if let Some(da) = self.acc(grads, *a) {
                    for (r, row) in g.chunks(p + q).enumerate() {
                        for (j, gi) in row[..p].iter().enumerate() {
                            da[r * p + j] += gi;
                        }
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for (r, row) in g.chunks(p + q).enumerate() {
                        for (j, gi) in row[p..].iter().enumerate() {
                            db[r * q + j] += gi;
                        }
                    }
                }
            }
            Op::MaskedSoftmax { x, mask } => {
                let n = self.value(*x).shape()[1];
                if let Some(dx) = self.acc(grads, *x) {
                    for (r, (gr, pr)) in g.chunks(n).zip(out.chunks(n)).enumerate() {
                        let dot: f64 = gr.iter().zip(pr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            if mask[r * n + j] {
                                dx[r * n + j] += pr[j] * (gr[j] - dot);
                            }
                        }
                    }
                }
            }
            Op::MaskedLogSoftmax { x, mask } => {
                let n = self.value(*x).shape()[1];
                if let Some(dx) = self.acc(grads, *x) {
                    for (r, (gr, lr)) in g.chunks(n).zip(out.chunks(n)).enumerate() {
                        let mr = &mask[r * n..(r + 1) * n];
                        let total: f64 = gr
                            .iter()
                            .zip(mr)
                            .filter(|(_, &ok)| ok)
                            .map(|(v, _)| v)
                            .sum();
                        for j in 0..n {
                            if mr[j] {
                                dx[r * n + j] += gr[j] - lr[j].exp() * total;
                            }
                        }
                    }
                }
            }
            Op::MaskedEntropy {
                x,
                mask,
                probs,
                logp,
            } => {
                let n = self.value(*x).shape()[1];
                if let Some(dx) = self.acc(grads, *x) {
                    for (r, &gr) in g.iter().enumerate() {
                        let h = out[r];
                        for j in 0..n {
                            let k = r * n + j;
                            if mask[k] {
                                dx[k] -= gr * probs[k] * (logp[k] + h);
                            }
                        }
                    }
                }
            }
            Op::GatherCols { x, idx } => {
                let n = self.value(*x).shape()[1];
                if let Some(dx) = self.acc(grads, *x) {
                    for (r, (&c, gi)) in idx.iter().zip(g).enumerate() {
                        dx[r * n + c] += gi;
                    }
                }
            }
            Op::Exp(x) => self.unary(grads, *x, g, |j, gi| gi * out[j]),
            Op::Log(x) => {
                let xv = self.value(*x).data();
                self.unary(grads, *x, g, |j, gi| gi / xv[j]);
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                self.unary(grads, *x, g, |j, gi| 2.0 * xv[j] * gi);
            }
            Op::Scale(x, c) => self.unary(grads, *x, g, |_, gi| gi * c),
            Op::AddScalar(x) => self.unary(grads, *x, g, |_, gi| gi),
            Op::Add(a, b) => {
                self.unary(grads, *a, g, |_, gi| gi);
                self.unary(grads, *b, g, |_, gi| gi);
            }
            Op::Sub(a, b) => {
                self.unary(grads, *a, g, |_, gi| gi);
                self.unary(grads, *b, g, |_, gi| -gi);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.unary(grads, *a, g, |j, gi| gi * bv[j]);
                self.unary(grads, *b, g, |j, gi| gi * av[j]);
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x).data();
                self.unary(grads, *x, g, |j, gi| {
                    if xv[j] > *lo && xv[j] < *hi {
                        gi
                    } else {
                        0.0
                    }
                });
            }
            Op::Minimum(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.unary(grads, *a, g, |j, gi| if av[j] <= bv[j] { gi } else { 0.0 });
                self.unary(grads, *b, g, |j, gi| if av[j] <= bv[j] { 0.0 } else { gi });
            }
            Op::Sum(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                let n = self.value(*x).len().max(1) as f64;
                if let Some(dx) = self.acc(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
        }
    }
}
