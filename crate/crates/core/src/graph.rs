//! Reverse-mode autodiff over a per-forward tape.
//!
//! Each forward pass builds a fresh `Graph`; nodes own their values and the
//! op record needed to push gradients back. Parameters enter as tagged leaf
//! nodes whose values are copied out of the `ParamStore`, so the same store
//! can serve concurrent forward passes.

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Dense { x: Var, w: Var, b: Option<Var> },
    Relu { x: Var },
    Sigmoid { x: Var },
    Clamp { x: Var, lo: f64, hi: f64 },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Gap { x: Var },
    ChannelScale { x: Var, s: Var },
    Resize { x: Var, src_h: usize, src_w: usize },
    AdaptivePool { x: Var, src_h: usize, src_w: usize },
    ConcatChannels { parts: Vec<Var> },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, eps: f64 },
    BceSum { s: Var, target: Tensor },
    Sum { x: Var },
    SumSq { x: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

/// Gradients for every parameter leaf used in a graph, indexed like the store.
pub struct ParamGrads {
    grads: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn zeros(n: usize) -> ParamGrads {
        ParamGrads { grads: (0..n).map(|_| None).collect() }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.index()].as_ref()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<&Tensor>> {
        self.grads.iter().map(|g| g.as_ref())
    }

    /// Accumulate another gradient set (same store) into this one.
    pub fn accumulate(&mut self, other: &ParamGrads) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (dst, src) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(s) = src {
                match dst {
                    Some(d) => {
                        for (dv, sv) in d.data_mut().iter_mut().zip(s.data()) {
                            *dv += sv;
                        }
                    }
                    None => *dst = Some(s.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= c;
            }
        }
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, op: Op, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value, op, param });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Constant or differentiable input leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, None)
    }

    /// Leaf bound to a stored parameter; gradients are collected per id.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Leaf, Some(id))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    // -- primitive ops ------------------------------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        if wv.shape().len() != 4 || xv.shape().len() != 3 {
            return Err(Error::contract("conv2d expects [C,H,W] input and [O,C,kh,kw] weight"));
        }
        if wv.shape()[1] != xv.shape()[0] {
            return Err(Error::contract(format!(
                "conv2d channel mismatch: input {} vs weight {}",
                xv.shape()[0],
                wv.shape()[1]
            )));
        }
        let bv = b.map(|bb| self.value(bb));
        let out = tensor::conv2d(xv, wv, bv, stride, pad);
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, pad }, None))
    }

    /// Affine map on a vector: y = W x (+ bias), W shaped [out, in].
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        if wv.shape().len() != 2 || xv.shape().len() != 1 {
            return Err(Error::contract("dense expects vector input and [out,in] weight"));
        }
        if wv.shape()[1] != xv.shape()[0] {
            return Err(Error::contract(format!(
                "dense shape mismatch: input {} vs weight {:?}",
                xv.shape()[0],
                wv.shape()
            )));
        }
        let (o, i) = (wv.shape()[0], wv.shape()[1]);
        let mut out = vec![0.0; o];
        tensor::gemm_nn(o, i, 1, wv.data(), xv.data(), 0.0, &mut out);
        if let Some(bb) = b {
            for (v, bvv) in out.iter_mut().zip(self.value(bb).data()) {
                *v += bvv;
            }
        }
        let t = Tensor::from_vec(&[o], out);
        Ok(self.push(t, Op::Dense { x, w, b }, None))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu { x }, None)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(tensor::sigmoid);
        self.push(out, Op::Sigmoid { x }, None)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp { x, lo, hi }, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::contract(format!(
                "add shape mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::from_vec(self.shape(a), data);
        Ok(self.push(t, Op::Add { a, b }, None))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::contract(format!(
                "mul shape mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::from_vec(self.shape(a), data);
        Ok(self.push(t, Op::Mul { a, b }, None))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale { x, c }, None)
    }

    /// Global average pooling: [C,H,W] -> [C].
    pub fn gap(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 3 {
            return Err(Error::contract("gap expects a [C,H,W] tensor"));
        }
        let out = tensor::global_avg_pool(self.value(x));
        Ok(self.push(out, Op::Gap { x }, None))
    }

    /// Broadcast a [C] vector over the spatial extent of a [C,H,W] tensor.
    pub fn channel_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (c, h, w) = {
            let xv = self.value(x);
            if xv.shape().len() != 3 {
                return Err(Error::contract("channel_scale expects a [C,H,W] tensor"));
            }
            xv.chw()
        };
        if self.shape(s) != [c] {
            return Err(Error::contract(format!(
                "channel_scale vector has shape {:?}, expected [{c}]",
                self.shape(s)
            )));
        }
        let sv = self.value(s).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for ci in 0..c {
            let sc = sv[ci];
            for v in &mut data[ci * h * w..(ci + 1) * h * w] {
                *v *= sc;
            }
        }
        let t = Tensor::from_vec(&[c, h, w], data);
        Ok(self.push(t, Op::ChannelScale { x, s }, None))
    }

    /// Bilinear resize to (oh, ow).
    pub fn resize(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 3 {
            return Err(Error::contract("resize expects a [C,H,W] tensor"));
        }
        let (_, h, w) = xv.chw();
        if h == oh && w == ow {
            return Ok(x);
        }
        let out = tensor::resize_bilinear(xv, oh, ow);
        Ok(self.push(out, Op::Resize { x, src_h: h, src_w: w }, None))
    }

    pub fn adaptive_avg_pool(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 3 {
            return Err(Error::contract("adaptive_avg_pool expects a [C,H,W] tensor"));
        }
        let (_, h, w) = xv.chw();
        let out = tensor::adaptive_avg_pool(xv, oh, ow);
        Ok(self.push(out, Op::AdaptivePool { x, src_h: h, src_w: w }, None))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let (_, h, w) = self.value(parts[0]).chw();
        let mut c_total = 0;
        for &p in parts {
            let (c, ph, pw) = self.value(p).chw();
            if (ph, pw) != (h, w) {
                return Err(Error::contract(format!(
                    "concat spatial mismatch: ({ph},{pw}) vs ({h},{w})"
                )));
            }
            c_total += c;
        }
        let mut data = Vec::with_capacity(c_total * h * w);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::from_vec(&[c_total, h, w], data);
        Ok(self.push(t, Op::ConcatChannels { parts: parts.to_vec() }, None))
    }

    /// Per-sample group normalisation with per-channel affine parameters.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Result<Var> {
        let (c, h, w) = {
            let xv = self.value(x);
            if xv.shape().len() != 3 {
                return Err(Error::contract("group_norm expects a [C,H,W] tensor"));
            }
            xv.chw()
        };
        if groups == 0 || c % groups != 0 {
            return Err(Error::contract(format!("{c} channels not divisible into {groups} groups")));
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::contract("group_norm affine parameters must be [C]"));
        }
        let per = c / groups * h * w;
        let xv = self.value(x).data().to_vec();
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let mut out = vec![0.0; c * h * w];
        for g in 0..groups {
            let lo = g * per;
            let hi = lo + per;
            let mean = xv[lo..hi].iter().sum::<f64>() / per as f64;
            let var = xv[lo..hi].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
            let istd = 1.0 / (var + eps).sqrt();
            for i in lo..hi {
                let ch = i / (h * w);
                out[i] = (xv[i] - mean) * istd * gv[ch] + bv[ch];
            }
        }
        let t = Tensor::from_vec(&[c, h, w], out);
        Ok(self.push(t, Op::GroupNorm { x, gamma, beta, groups, eps }, None))
    }

    /// Pixel-summed binary cross-entropy against a constant binary target.
    pub fn bce_sum(&mut self, s: Var, target: &Tensor) -> Result<Var> {
        let sv = self.value(s);
        if sv.shape() != target.shape() {
            return Err(Error::contract(format!(
                "bce shape mismatch: prediction {:?} vs target {:?}",
                sv.shape(),
                target.shape()
            )));
        }
        let mut acc = 0.0;
        for (&p, &g) in sv.data().iter().zip(target.data()) {
            acc -= g * p.ln() + (1.0 - g) * (1.0 - p).ln();
        }
        let t = Tensor::scalar(acc);
        Ok(self.push(t, Op::BceSum { s, target: target.clone() }, None))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        self.push(t, Op::Sum { x }, None)
    }

    pub fn sum_sq(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).data().iter().map(|v| v * v).sum());
        self.push(t, Op::SumSq { x }, None)
    }

    // -- backward -----------------------------------------------------------

    fn grad_buf(&mut self, v: Var) -> &mut Vec<f64> {
        let n = self.nodes[v.0].value.len();
        self.grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }

    /// Run reverse accumulation from a scalar root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::contract("backward root must be a scalar"));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[root.0] = Some(vec![1.0]);

        for idx in (0..self.nodes.len()).rev() {
            if self.grads[idx].is_none() {
                continue;
            }
            let dy = self.grads[idx].take().unwrap();
            self.backprop_node(idx, &dy);
            self.grads[idx] = Some(dy);
        }
        Ok(())
    }

    fn backprop_node(&mut self, idx: usize, dy: &[f64]) {
        // Needed context is copied out of the node up-front so grad buffers
        // can be borrowed mutably afterwards.
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let (x, w, b, stride, pad) = (*x, *w, *b, *stride, *pad);
                let xv = self.nodes[x.0].value.clone();
                let wv = self.nodes[w.0].value.clone();
                let (c, h, wd) = xv.chw();
                let o = wv.shape()[0];
                let kh = wv.shape()[2];
                let kw = wv.shape()[3];
                let oh = tensor::conv_out_size(h, kh, stride, pad);
                let ow = tensor::conv_out_size(wd, kw, stride, pad);
                let l = oh * ow;
                let kc = c * kh * kw;

                if let Some(bvar) = b {
                    let db = self.grad_buf(bvar);
                    for oi in 0..o {
                        db[oi] += dy[oi * l..(oi + 1) * l].iter().sum::<f64>();
                    }
                }

                if kh == 1 && kw == 1 && stride == 1 && pad == 0 {
                    // dW = dY * X^T ; dX = W^T * dY
                    {
                        let mut dw = vec![0.0; o * kc];
                        tensor::gemm_nt(o, l, kc, dy, xv.data(), 0.0, &mut dw);
                        let dwbuf = self.grad_buf(w);
                        for (d, s) in dwbuf.iter_mut().zip(&dw) {
                            *d += s;
                        }
                    }
                    let mut dx = vec![0.0; kc * l];
                    tensor::gemm_tn(kc, o, l, wv.data(), dy, 0.0, &mut dx);
                    let dxbuf = self.grad_buf(x);
                    for (d, s) in dxbuf.iter_mut().zip(&dx) {
                        *d += s;
                    }
                } else {
                    let mut cols = Vec::new();
                    tensor::im2col(&xv, kh, kw, stride, pad, &mut cols);
                    {
                        let mut dw = vec![0.0; o * kc];
                        tensor::gemm_nt(o, l, kc, dy, &cols, 0.0, &mut dw);
                        let dwbuf = self.grad_buf(w);
                        for (d, s) in dwbuf.iter_mut().zip(&dw) {
                            *d += s;
                        }
                    }
                    let mut dcols = vec![0.0; kc * l];
                    tensor::gemm_tn(kc, o, l, wv.data(), dy, 0.0, &mut dcols);
                    let mut dx = vec![0.0; c * h * wd];
                    tensor::col2im_add(&dcols, c, h, wd, kh, kw, stride, pad, &mut dx);
                    let dxbuf = self.grad_buf(x);
                    for (d, s) in dxbuf.iter_mut().zip(&dx) {
                        *d += s;
                    }
                }
            }
            Op::Dense { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let xv = self.nodes[x.0].value.clone();
                let wv = self.nodes[w.0].value.clone();
                let (o, i) = (wv.shape()[0], wv.shape()[1]);
                if let Some(bvar) = b {
                    let db = self.grad_buf(bvar);
                    for (d, s) in db.iter_mut().zip(dy) {
                        *d += s;
                    }
                }
                {
                    let dwbuf = self.grad_buf(w);
                    for oi in 0..o {
                        for ii in 0..i {
                            dwbuf[oi * i + ii] += dy[oi] * xv.data()[ii];
                        }
                    }
                }
                let dxbuf = self.grad_buf(x);
                for ii in 0..i {
                    let mut acc = 0.0;
                    for oi in 0..o {
                        acc += wv.data()[oi * i + ii] * dy[oi];
                    }
                    dxbuf[ii] += acc;
                }
            }
            Op::Relu { x } => {
                let x = *x;
                let xv = self.nodes[x.0].value.data().to_vec();
                let dx = self.grad_buf(x);
                for ((d, s), &v) in dx.iter_mut().zip(dy).zip(&xv) {
                    if v > 0.0 {
                        *d += s;
                    }
                }
            }
            Op::Sigmoid { x } => {
                let x = *x;
                let yv = self.nodes[idx].value.data().to_vec();
                let dx = self.grad_buf(x);
                for ((d, s), &y) in dx.iter_mut().zip(dy).zip(&yv) {
                    *d += s * y * (1.0 - y);
                }
            }
            Op::Clamp { x, lo, hi } => {
                let (x, lo, hi) = (*x, *lo, *hi);
                let xv = self.nodes[x.0].value.data().to_vec();
                let dx = self.grad_buf(x);
                for ((d, s), &v) in dx.iter_mut().zip(dy).zip(&xv) {
                    if v > lo && v < hi {
                        *d += s;
                    }
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                {
                    let da = self.grad_buf(a);
                    for (d, s) in da.iter_mut().zip(dy) {
                        *d += s;
                    }
                }
                let db = self.grad_buf(b);
                for (d, s) in db.iter_mut().zip(dy) {
                    *d += s;
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                {
                    let da = self.grad_buf(a);
                    for ((d, s), &v) in da.iter_mut().zip(dy).zip(&bv) {
                        *d += s * v;
                    }
                }
                let db = self.grad_buf(b);
                for ((d, s), &v) in db.iter_mut().zip(dy).zip(&av) {
                    *d += s * v;
                }
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                let dx = self.grad_buf(x);
                for (d, s) in dx.iter_mut().zip(dy) {
                    *d += s * c;
                }
            }
            Op::Gap { x } => {
                let x = *x;
                let (c, h, w) = self.nodes[x.0].value.chw();
                let scale = 1.0 / (h * w) as f64;
                let dx = self.grad_buf(x);
                for ci in 0..c {
                    let g = dy[ci] * scale;
                    for v in &mut dx[ci * h * w..(ci + 1) * h * w] {
                        *v += g;
                    }
                }
            }
            Op::ChannelScale { x, s } => {
                let (x, s) = (*x, *s);
                let xv = self.nodes[x.0].value.clone();
                let sv = self.nodes[s.0].value.data().to_vec();
                let (c, h, w) = xv.chw();
                {
                    let dx = self.grad_buf(x);
                    for ci in 0..c {
                        let sc = sv[ci];
                        for (d, g) in dx[ci * h * w..(ci + 1) * h * w]
                            .iter_mut()
                            .zip(&dy[ci * h * w..(ci + 1) * h * w])
                        {
                            *d += g * sc;
                        }
                    }
                }
                let ds = self.grad_buf(s);
                for ci in 0..c {
                    let mut acc = 0.0;
                    for (xvv, g) in xv.data()[ci * h * w..(ci + 1) * h * w]
                        .iter()
                        .zip(&dy[ci * h * w..(ci + 1) * h * w])
                    {
                        acc += xvv * g;
                    }
                    ds[ci] += acc;
                }
            }
            Op::Resize { x, src_h, src_w } => {
                let (x, src_h, src_w) = (*x, *src_h, *src_w);
                let out_shape = self.nodes[idx].value.shape().to_vec();
                let (c, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
                let ty = tensor::bilinear_table(src_h, oh);
                let tx = tensor::bilinear_table(src_w, ow);
                let dx = self.grad_buf(x);
                for ci in 0..c {
                    let dst = &mut dx[ci * src_h * src_w..(ci + 1) * src_h * src_w];
                    let gsrc = &dy[ci * oh * ow..(ci + 1) * oh * ow];
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let g = gsrc[oy * ow + ox];
                            dst[y0 * src_w + x0] += g * (1.0 - fy) * (1.0 - fx);
                            dst[y0 * src_w + x1] += g * (1.0 - fy) * fx;
                            dst[y1 * src_w + x0] += g * fy * (1.0 - fx);
                            dst[y1 * src_w + x1] += g * fy * fx;
                        }
                    }
                }
            }
            Op::AdaptivePool { x, src_h, src_w } => {
                let (x, src_h, src_w) = (*x, *src_h, *src_w);
                let out_shape = self.nodes[idx].value.shape().to_vec();
                let (c, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
                let dx = self.grad_buf(x);
                for ci in 0..c {
                    let dst = &mut dx[ci * src_h * src_w..(ci + 1) * src_h * src_w];
                    for oy in 0..oh {
                        let (y0, y1) = tensor::pool_window(src_h, oh, oy);
                        for ox in 0..ow {
                            let (x0, x1) = tensor::pool_window(src_w, ow, ox);
                            let g = dy[(ci * oh + oy) * ow + ox] / ((y1 - y0) * (x1 - x0)) as f64;
                            for y in y0..y1 {
                                for xx in x0..x1 {
                                    dst[y * src_w + xx] += g;
                                }
                            }
                        }
                    }
                }
            }
            Op::ConcatChannels { parts } => {
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.len();
                    let dp = self.grad_buf(p);
                    for (d, s) in dp.iter_mut().zip(&dy[offset..offset + n]) {
                        *d += s;
                    }
                    offset += n;
                }
            }
            Op::GroupNorm { x, gamma, beta, groups, eps } => {
                let (x, gamma, beta, groups, eps) = (*x, *gamma, *beta, *groups, *eps);
                let (c, h, w) = self.nodes[x.0].value.chw();
                let xv = self.nodes[x.0].value.data().to_vec();
                let gv = self.nodes[gamma.0].value.data().to_vec();
                let per = c / groups * h * w;
                let hw = h * w;

                let mut dx_all = vec![0.0; c * hw];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for g in 0..groups {
                    let lo = g * per;
                    let hi = lo + per;
                    let mean = xv[lo..hi].iter().sum::<f64>() / per as f64;
                    let var =
                        xv[lo..hi].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
                    let istd = 1.0 / (var + eps).sqrt();
                    // accumulate the two reductions the gradient needs
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for i in lo..hi {
                        let ch = i / hw;
                        let xhat = (xv[i] - mean) * istd;
                        let dxhat = dy[i] * gv[ch];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        dgamma[ch] += dy[i] * xhat;
                        dbeta[ch] += dy[i];
                    }
                    let inv_n = 1.0 / per as f64;
                    for i in lo..hi {
                        let ch = i / hw;
                        let xhat = (xv[i] - mean) * istd;
                        let dxhat = dy[i] * gv[ch];
                        dx_all[i] =
                            istd * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
                    }
                }
                {
                    let dxb = self.grad_buf(x);
                    for (d, s) in dxb.iter_mut().zip(&dx_all) {
                        *d += s;
                    }
                }
                {
                    let dg = self.grad_buf(gamma);
                    for (d, s) in dg.iter_mut().zip(&dgamma) {
                        *d += s;
                    }
                }
                let db = self.grad_buf(beta);
                for (d, s) in db.iter_mut().zip(&dbeta) {
                    *d += s;
                }
            }
            Op::BceSum { s, target } => {
                let s = *s;
                let target = target.clone();
                let sv = self.nodes[s.0].value.data().to_vec();
                let ds = self.grad_buf(s);
                let g0 = dy[0];
                for ((d, &p), &g) in ds.iter_mut().zip(&sv).zip(target.data()) {
                    *d += g0 * (p - g) / (p * (1.0 - p));
                }
            }
            Op::Sum { x } => {
                let x = *x;
                let dx = self.grad_buf(x);
                for d in dx.iter_mut() {
                    *d += dy[0];
                }
            }
            Op::SumSq { x } => {
                let x = *x;
                let xv = self.nodes[x.0].value.data().to_vec();
                let dx = self.grad_buf(x);
                for (d, &v) in dx.iter_mut().zip(&xv) {
                    *d += 2.0 * v * dy[0];
                }
            }
        }
    }

    /// Gradient of the last backward pass w.r.t. a node, if it received one.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_vec(self.nodes[v.0].value.shape(), g.clone()))
    }

    /// Collect parameter-leaf gradients, indexed like the store.
    pub fn param_grads(&self, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros(store.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Some(pid), Some(g)) = (node.param, self.grads[idx].as_ref()) {
                let t = Tensor::from_vec(node.value.shape(), g.clone());
                match &mut out.grads[pid.index()] {
                    Some(existing) => {
                        for (d, s) in existing.data_mut().iter_mut().zip(t.data()) {
                            *d += s;
                        }
                    }
                    slot => *slot = Some(t),
                }
            }
        }
        out
    }
}
