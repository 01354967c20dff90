//! Reverse-mode differentiation over a recorded operation list.
//!
//! Feature maps are `(height, width, channels)` tensors; a batch is handled by
//! running one tape per sample and summing the resulting [`Gradients`].

use std::sync::Arc;

use super::kernels;
use super::params::{Gradients, ParamId, ParamStore};
use crate::{Error, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Marks an absent source in a gather map.
pub const NO_SOURCE: usize = usize::MAX;

/// Stabilizer of fast normalized fusion.
pub const FUSION_EPS: f64 = 1e-4;
/// Variance floor of layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Param,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        cols: Option<Vec<f64>>,
    },
    Add(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    LeakyRelu(Var, f64),
    Mish(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Upsample2(Var),
    AvgPool2(Var),
    Fuse {
        inputs: Vec<Var>,
        w: Var,
    },
    Gather {
        x: Var,
        index: Arc<Vec<usize>>,
    },
    MaxAxis {
        x: Var,
        argmax: Vec<usize>,
    },
    SegmentMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation against a parameter store.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// The node holding parameter `id`; created once per tape.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let v = self.push(p.value.clone(), Op::Param, !p.frozen);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// Same-padded 2D convolution. `x` is `(H, W, Cin)`, `w` is
    /// `(k, k, Cin, Cout)` with odd `k`, `b` is `(Cout)`. Output is
    /// `(ceil(H/stride), ceil(W/stride), Cout)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 4 || ws[0] != ws[1] || ws[0].is_multiple_of(2) || ws[2] != xs[2] || stride == 0
        {
            return Err(shape_err(format!(
                "conv2d input {xs:?} with kernel {ws:?} stride {stride}"
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[3]] {
                return Err(shape_err(format!(
                    "conv2d bias {:?} for {} output channels",
                    self.shape(b),
                    ws[3]
                )));
            }
        }
        let geom = kernels::ConvGeom::new(xs[0], xs[1], xs[2], ws[3], ws[0], stride);
        let bias = b.map(|b| self.value(b).data());
        let (out, cols) = kernels::conv2d_forward(&geom, self.value(x).data(), self.value(w).data(), bias);
        let needs = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        let cols = if self.ng(w) { cols } else { None };
        let value = Tensor::from_vec(&[geom.ho, geom.wo, geom.cout], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, stride, cols }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("add {:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        let needs = self.ng(a);
        self.push(v, Op::Scale(a, s), needs)
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| shape_err("concat of nothing".into()))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut widths = Vec::new();
        for &x in xs {
            let s = self.shape(x);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(shape_err(format!("concat leading shapes differ: {lead:?} vs {s:?}")));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &cw) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[r * cw..(r + 1) * cw]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let needs = xs.iter().any(|&x| self.ng(x));
        Ok(self.push(Tensor::from_vec(&shape, data)?, Op::Concat(xs.to_vec()), needs))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x).map(|a| if a > 0.0 { a } else { slope * a });
        let needs = self.ng(x);
        self.push(v, Op::LeakyRelu(x, slope), needs)
    }

    pub fn mish(&mut self, x: Var) -> Var {
        let v = self.value(x).map(kernels::mish);
        let needs = self.ng(x);
        self.push(v, Op::Mish(x), needs)
    }

    /// Normalizes over the last axis, then applies `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let c = *xs.last().ok_or_else(|| shape_err("layer_norm of a scalar".into()))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(format!(
                "layer_norm over {c} channels with gamma {:?} beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (out, xhat, rstd) = kernels::layer_norm_forward(
            self.value(x).data(),
            c,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let needs = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            Tensor::from_vec(&xs, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// Nearest-neighbour 2x upsampling of an `(H, W, C)` map.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(shape_err(format!("upsample2 of {s:?}")));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let src = self.value(x).data();
        let mut out = vec![0.0; 4 * h * w * c];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                let o = (y * 2 * w + xx) * c;
                let i = ((y / 2) * w + xx / 2) * c;
                out[o..o + c].copy_from_slice(&src[i..i + c]);
            }
        }
        let needs = self.ng(x);
        Ok(self.push(Tensor::from_vec(&[2 * h, 2 * w, c], out)?, Op::Upsample2(x), needs))
    }

    /// 2x2 average pooling with stride 2; both spatial sizes must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || !s[0].is_multiple_of(2) || !s[1].is_multiple_of(2) {
            return Err(shape_err(format!("avg_pool2 of {s:?}")));
        }
        let (h, w, c) = (s[0] / 2, s[1] / 2, s[2]);
        let src = self.value(x).data();
        let mut out = vec![0.0; h * w * c];
        for y in 0..h {
            for xx in 0..w {
                let o = (y * w + xx) * c;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let i = ((2 * y + dy) * s[1] + 2 * xx + dx) * c;
                    for k in 0..c {
                        out[o + k] += 0.25 * src[i + k];
                    }
                }
            }
        }
        let needs = self.ng(x);
        Ok(self.push(Tensor::from_vec(&[h, w, c], out)?, Op::AvgPool2(x), needs))
    }

    /// Fast normalized fusion: `Σ relu(w_i) x_i / (Σ relu(w_j) + ε)`.
    pub fn fuse(&mut self, inputs: &[Var], w: Var) -> Result<Var> {
        if inputs.is_empty() || self.shape(w) != [inputs.len()] {
            return Err(shape_err(format!(
                "fuse of {} inputs with weights {:?}",
                inputs.len(),
                self.shape(w)
            )));
        }
        let shape = self.shape(inputs[0]).to_vec();
        if inputs.iter().any(|&i| self.shape(i) != shape.as_slice()) {
            return Err(shape_err("fuse inputs differ in shape".into()));
        }
        let r: Vec<f64> = self.value(w).data().iter().map(|v| v.max(0.0)).collect();
        let denom = r.iter().sum::<f64>() + FUSION_EPS;
        let mut out = Tensor::zeros(&shape);
        for (&x, &ri) in inputs.iter().zip(&r) {
            let a = ri / denom;
            for (o, v) in out.data_mut().iter_mut().zip(self.value(x).data()) {
                *o += a * v;
            }
        }
        let needs = self.ng(w) || inputs.iter().any(|&i| self.ng(i));
        Ok(self.push(
            out,
            Op::Fuse {
                inputs: inputs.to_vec(),
                w,
            },
            needs,
        ))
    }

    /// `out[i] = x[index[i]]`, or zero where `index[i] == NO_SOURCE`.
    pub fn gather(&mut self, x: Var, index: Arc<Vec<usize>>, out_shape: &[usize]) -> Result<Var> {
        let n: usize = out_shape.iter().product();
        if index.len() != n {
            return Err(shape_err(format!(
                "gather map of {} entries for output {out_shape:?}",
                index.len()
            )));
        }
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i != NO_SOURCE && i >= src.len()) {
            return Err(shape_err(format!("gather index {bad} out of range {}", src.len())));
        }
        let data = index
            .iter()
            .map(|&i| if i == NO_SOURCE { 0.0 } else { src[i] })
            .collect();
        let needs = self.ng(x);
        Ok(self.push(Tensor::from_vec(out_shape, data)?, Op::Gather { x, index }, needs))
    }

    /// Maximum over `axis`, which is removed from the shape. Ties resolve to
    /// the lowest index.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || s[axis] == 0 {
            return Err(shape_err(format!("max over axis {axis} of {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let n = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for i in 0..inner {
                    let v = src[base + i];
                    if v > out[o * inner + i] {
                        out[o * inner + i] = v;
                        argmax[o * inner + i] = base + i;
                    }
                }
            }
        }
        let mut shape = s.clone();
        shape.remove(axis);
        let needs = self.ng(x);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::MaxAxis { x, argmax }, needs))
    }

    /// Row-wise maximum of `x` (`(N, F)`) within each `(start, len)` segment.
    /// Output is `(segments, F)`; empty segments are rejected.
    pub fn segment_max(&mut self, x: Var, segments: &[(usize, usize)]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(shape_err(format!("segment_max of {s:?}")));
        }
        let f = s[1];
        let src = self.value(x).data();
        let mut out = vec![0.0; segments.len() * f];
        let mut argmax = vec![0usize; segments.len() * f];
        for (si, &(start, len)) in segments.iter().enumerate() {
            if len == 0 || start + len > s[0] {
                return Err(shape_err(format!(
                    "segment {si} ({start}, {len}) invalid for {} rows",
                    s[0]
                )));
            }
            for k in 0..f {
                let mut best = start;
                for r in start + 1..start + len {
                    if src[r * f + k] > src[best * f + k] {
                        best = r;
                    }
                }
                out[si * f + k] = src[best * f + k];
                argmax[si * f + k] = best * f + k;
            }
        }
        let needs = self.ng(x);
        Ok(self.push(
            Tensor::from_vec(&[segments.len(), f], out)?,
            Op::SegmentMax { x, argmax },
            needs,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        let needs = self.ng(x);
        Ok(self.push(v, Op::Reshape(x), needs))
    }

    /// Backpropagates `seeds` (output node, dL/d output) and returns the
    /// gradient of every parameter that was reached.
    pub fn backward(&self, seeds: &[(Var, &Tensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for &(v, g) in seeds {
            if g.shape() != self.shape(v) {
                return Err(shape_err(format!(
                    "seed gradient {:?} for value {:?}",
                    g.shape(),
                    self.shape(v)
                )));
            }
            accumulate(&mut grads[v.0], g.clone());
        }
        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Param = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(node, &g, &mut grads);
        }
        let mut out = vec![None; self.store.len()];
        for (pid, v) in self.param_nodes.iter().enumerate() {
            if let Some(v) = v {
                out[pid] = grads[v.0].take();
            }
        }
        Ok(Gradients(out))
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let ng = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv2d { x, w, b, stride, cols } => {
                let xs = self.shape(*x);
                let ws = self.shape(*w);
                let geom = kernels::ConvGeom::new(xs[0], xs[1], xs[2], ws[3], ws[0], *stride);
                if let Some(b) = b.filter(|&b| ng(b)) {
                    let mut gb = vec![0.0; geom.cout];
                    for row in g.data().chunks_exact(geom.cout) {
                        for (a, v) in gb.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    accumulate(&mut grads[b.0], Tensor::from_vec(&[geom.cout], gb).unwrap());
                }
                if ng(*w) {
                    let cols = cols.as_deref().unwrap_or_else(|| self.value(*x).data());
                    let gw = kernels::conv2d_weight_grad(&geom, cols, g.data());
                    accumulate(&mut grads[w.0], Tensor::from_vec(ws, gw).unwrap());
                }
                if ng(*x) {
                    let gx = kernels::conv2d_input_grad(&geom, self.value(*w).data(), g.data());
                    accumulate(&mut grads[x.0], Tensor::from_vec(xs, gx).unwrap());
                }
            }
            Op::Add(a, b) => {
                if ng(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if ng(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Scale(a, s) => {
                if ng(*a) {
                    accumulate(&mut grads[a.0], g.map(|v| v * s));
                }
            }
            Op::Concat(xs) => {
                let widths: Vec<usize> = xs.iter().map(|&x| *self.shape(x).last().unwrap()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total.max(1);
                let mut off = 0;
                for (&x, &cw) in xs.iter().zip(&widths) {
                    if ng(x) {
                        let mut d = Vec::with_capacity(rows * cw);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + off..r * total + off + cw]);
                        }
                        accumulate(&mut grads[x.0], Tensor::from_vec(self.shape(x), d).unwrap());
                    }
                    off += cw;
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                let d = g
                    .data()
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &xi)| if xi > 0.0 { gi } else { slope * gi })
                    .collect();
                accumulate(&mut grads[x.0], Tensor::from_vec(self.shape(*x), d).unwrap());
            }
            Op::Mish(x) => {
                let xv = self.value(*x).data();
                let d = g
                    .data()
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &xi)| gi * kernels::mish_grad(xi))
                    .collect();
                accumulate(&mut grads[x.0], Tensor::from_vec(self.shape(*x), d).unwrap());
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = self.shape(*gamma)[0];
                let (gx, gg, gbeta) = kernels::layer_norm_backward(g.data(), xhat, rstd, self.value(*gamma).data(), c);
                if ng(*x) {
                    accumulate(&mut grads[x.0], Tensor::from_vec(self.shape(*x), gx).unwrap());
                }
                if ng(*gamma) {
                    accumulate(&mut grads[gamma.0], Tensor::from_vec(&[c], gg).unwrap());
                }
                if ng(*beta) {
                    accumulate(&mut grads[beta.0], Tensor::from_vec(&[c], gbeta).unwrap());
                }
            }
            Op::Upsample2(x) => {
                let s = self.shape(*x);
                let (h, w, c) = (s[0], s[1], s[2]);
                let mut d = vec![0.0; h * w * c];
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        let o = (y * 2 * w + xx) * c;
                        let i = ((y / 2) * w + xx / 2) * c;
                        for k in 0..c {
                            d[i + k] += g.data()[o + k];
                        }
                    }
                }
                accumulate(&mut grads[x.0], Tensor::from_vec(s, d).unwrap());
            }
            Op::AvgPool2(x) => {
                let s = self.shape(*x);
                let (h, w, c) = (s[0] / 2, s[1] / 2, s[2]);
                let mut d = vec![0.0; s[0] * s[1] * c];
                for y in 0..h {
                    for xx in 0..w {
                        let o = (y * w + xx) * c;
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let i = ((2 * y + dy) * s[1] + 2 * xx + dx) * c;
                            for k in 0..c {
                                d[i + k] += 0.25 * g.data()[o + k];
                            }
                        }
                    }
                }
                accumulate(&mut grads[x.0], Tensor::from_vec(s, d).unwrap());
            }
            Op::Fuse { inputs, w } => {
                let wv = self.value(*w).data();
                let r: Vec<f64> = wv.iter().map(|v| v.max(0.0)).collect();
                let denom = r.iter().sum::<f64>() + FUSION_EPS;
                for (&x, &ri) in inputs.iter().zip(&r) {
                    if ng(x) {
                        accumulate(&mut grads[x.0], g.map(|v| v * ri / denom));
                    }
                }
                if ng(*w) {
                    let out = node.value.data();
                    let gw = inputs
                        .iter()
                        .zip(wv)
                        .map(|(&x, &wi)| {
                            if wi <= 0.0 {
                                return 0.0;
                            }
                            let xv = self.value(x).data();
                            g.data()
                                .iter()
                                .zip(xv.iter().zip(out))
                                .map(|(gi, (xi, oi))| gi * (xi - oi))
                                .sum::<f64>()
                                / denom
                        })
                        .collect();
                    accumulate(&mut grads[w.0], Tensor::from_vec(&[inputs.len()], gw).unwrap());
                }
            }
            Op::Gather { x, index } => {
                let mut d = vec![0.0; self.value(*x).len()];
                for (&i, &gi) in index.iter().zip(g.data()) {
                    if i != NO_SOURCE {
                        d[i] += gi;
                    }
                }
                accumulate(&mut grads[x.0], Tensor::from_vec(self.shape(*x), d).unwrap());
            }
            Op::MaxAxis { x, argmax } | Op::SegmentMax { x, argmax } => {
                let mut d = vec![0.0; self.value(*x).len()];
                for (&i, &gi) in argmax.iter().zip(g.data()) {
                    d[i] += gi;
                }
                accumulate(&mut grads[x.0], Tensor::from_vec(self.shape(*x), d).unwrap());
            }
            Op::Reshape(x) => {
                let d = g.clone().reshape(self.shape(*x)).unwrap();
                accumulate(&mut grads[x.0], d);
            }
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(s) => s.add_assign(&g),
        None => *slot = Some(g),
    }
}
