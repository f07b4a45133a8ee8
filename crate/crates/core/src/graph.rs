//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so walking the tape backwards visits every node after all
//! of its consumers. Binary ops broadcast their operands numpy-style, but only
//! between tensors of equal rank.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::nn::{ParamId, ParamStore};
use crate::tensor::{strides, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Silu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Sqrt(Var),
    Square(Var),
    Abs(Var),
    ClampMin(Var, f64),
    Sum(Var),
    MeanAxes(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Upsample(Var, usize),
    ResizeBilinear(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    // Keyed by store address so several stores can share one graph.
    params: HashMap<(usize, ParamId), Var>,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A graph whose parameters are treated as constants (frozen teachers,
    /// inference).
    pub fn no_grad() -> Self {
        Graph {
            grad_enabled: false,
            ..Self::new()
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives a gradient (used to differentiate w.r.t. inputs).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds parameter `id` from `store`; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let key = (store_key(store), id);
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.params.insert(key, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let out = broadcast_apply(self.value(a), self.value(b), f);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, op, rg)
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

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| k * x, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        self.unary(a, |x| x.max(lo), Op::ClampMin(a, lo))
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean over `axes`, keeping reduced axes with extent 1.
    pub fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Var {
        let x = self.value(a);
        let mut out_shape = x.shape().to_vec();
        let mut count = 1usize;
        for &ax in axes {
            count *= out_shape[ax];
            out_shape[ax] = 1;
        }
        let mut out = Tensor::zeros(&out_shape);
        {
            let od = out.data_mut();
            for_each_broadcast(x.shape(), x.shape(), &out_shape, |o, _, io| {
                od[io] += x.data()[o];
            });
            let inv = 1.0 / count as f64;
            od.iter_mut().for_each(|v| *v *= inv);
        }
        let rg = self.rg(a);
        self.push(out, Op::MeanAxes(a), rg)
    }

    /// 2-D convolution; `x` is `[N, C, H, W]`, `w` is `[O, C, k, k]`, `b` is `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let out = conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(out, Op::Conv2d { x, w, b, stride, pad }, rg)
    }

    /// Nearest-neighbour upsampling of a `[N, C, H, W]` tensor by an integer factor.
    pub fn upsample_nearest(&mut self, a: Var, factor: usize) -> Var {
        let x = self.value(a);
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = (h * factor, w * factor);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        {
            let od = out.data_mut();
            let xd = x.data();
            for p in 0..n * c {
                for y in 0..oh {
                    for xx in 0..ow {
                        od[(p * oh + y) * ow + xx] = xd[(p * h + y / factor) * w + xx / factor];
                    }
                }
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::Upsample(a, factor), rg)
    }

    /// Bilinear resampling of a `[N, C, H, W]` tensor to `[N, C, out_h, out_w]`
    /// (half-pixel centres, edge clamped).
    pub fn resize_bilinear(&mut self, a: Var, out_h: usize, out_w: usize) -> Var {
        let x = self.value(a);
        let out = resize_bilinear_forward(x, out_h, out_w);
        let rg = self.rg(a);
        self.push(out, Op::ResizeBilinear(a), rg)
    }

    /// Reverse pass from a one-element `loss`. Only leaf gradients are retained.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let (av, bv) = (self.value(a), self.value(b));
                if self.rg(a) {
                    let mut ga = Tensor::zeros(av.shape());
                    let gd = ga.data_mut();
                    for_each_broadcast(g.shape(), av.shape(), bv.shape(), |o, ia, _| {
                        gd[ia] += g.data()[o];
                    });
                    accumulate(grads, a, ga);
                }
                if self.rg(b) {
                    let mut gb = Tensor::zeros(bv.shape());
                    let gd = gb.data_mut();
                    for_each_broadcast(g.shape(), av.shape(), bv.shape(), |o, _, ib| {
                        gd[ib] += sign * g.data()[o];
                    });
                    accumulate(grads, b, gb);
                }
            }
            Op::Mul(a, b) | Op::Div(a, b) => {
                let div = matches!(node.op, Op::Div(..));
                let (av, bv) = (self.value(a), self.value(b));
                let (ad, bd, gdat) = (av.data(), bv.data(), g.data());
                if self.rg(a) {
                    let mut ga = Tensor::zeros(av.shape());
                    let gd = ga.data_mut();
                    for_each_broadcast(g.shape(), av.shape(), bv.shape(), |o, ia, ib| {
                        let d = if div { 1.0 / bd[ib] } else { bd[ib] };
                        gd[ia] += gdat[o] * d;
                    });
                    accumulate(grads, a, ga);
                }
                if self.rg(b) {
                    let mut gb = Tensor::zeros(bv.shape());
                    let gd = gb.data_mut();
                    for_each_broadcast(g.shape(), av.shape(), bv.shape(), |o, ia, ib| {
                        let d = if div {
                            -ad[ia] / (bd[ib] * bd[ib])
                        } else {
                            ad[ia]
                        };
                        gd[ib] += gdat[o] * d;
                    });
                    accumulate(grads, b, gb);
                }
            }
            Op::Scale(a, k) => accumulate(grads, a, g.map(|v| v * k)),
            Op::AddScalar(a) => accumulate(grads, a, g.clone()),
            Op::Silu(a) => {
                let x = self.value(a);
                accumulate(grads, a, zip_map(g, x, |gv, xv| {
                    let s = sigmoid(xv);
                    gv * s * (1.0 + xv * (1.0 - s))
                }));
            }
            Op::Sigmoid(a) => accumulate(grads, a, zip_map(g, y, |gv, yv| gv * yv * (1.0 - yv))),
            Op::Softplus(a) => {
                let x = self.value(a);
                accumulate(grads, a, zip_map(g, x, |gv, xv| gv * sigmoid(xv)));
            }
            Op::Sqrt(a) => accumulate(grads, a, zip_map(g, y, |gv, yv| gv * 0.5 / yv)),
            Op::Square(a) => {
                let x = self.value(a);
                accumulate(grads, a, zip_map(g, x, |gv, xv| 2.0 * gv * xv));
            }
            Op::Abs(a) => {
                let x = self.value(a);
                accumulate(grads, a, zip_map(g, x, |gv, xv| gv * xv.signum()));
            }
            Op::ClampMin(a, lo) => {
                let x = self.value(a);
                accumulate(grads, a, zip_map(g, x, |gv, xv| if xv > lo { gv } else { 0.0 }));
            }
            Op::Sum(a) => {
                let s = g.item();
                accumulate(grads, a, Tensor::full(self.shape(a), s));
            }
            Op::MeanAxes(a) => {
                let x = self.value(a);
                let count = (x.len() / y.len()) as f64;
                let mut ga = Tensor::zeros(x.shape());
                let gd = ga.data_mut();
                for_each_broadcast(x.shape(), x.shape(), y.shape(), |o, _, io| {
                    gd[o] = g.data()[io] / count;
                });
                accumulate(grads, a, ga);
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (dx, dw, db) = conv2d_backward(
                    self.value(x),
                    self.value(w),
                    g,
                    stride,
                    pad,
                    self.rg(x),
                );
                if let Some(dx) = dx {
                    accumulate(grads, x, dx);
                }
                if self.rg(w) {
                    accumulate(grads, w, dw);
                }
                if let Some(b) = b {
                    if self.rg(b) {
                        accumulate(grads, b, db);
                    }
                }
            }
            Op::Upsample(a, factor) => {
                let x = self.value(a);
                let (n, c, h, w) = x.dims4();
                let (oh, ow) = (h * factor, w * factor);
                let mut ga = Tensor::zeros(x.shape());
                let gd = ga.data_mut();
                for p in 0..n * c {
                    for yy in 0..oh {
                        for xx in 0..ow {
                            gd[(p * h + yy / factor) * w + xx / factor] +=
                                g.data()[(p * oh + yy) * ow + xx];
                        }
                    }
                }
                accumulate(grads, a, ga);
            }
            Op::ResizeBilinear(a) => {
                let x = self.value(a);
                accumulate(grads, a, resize_bilinear_backward(x.shape(), g));
            }
        }
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` if it did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients for every parameter of `store` bound into `graph`,
    /// zero-filled when a parameter did not reach the loss.
    pub fn param_grads(&self, graph: &Graph, store: &ParamStore) -> Vec<(ParamId, Tensor)> {
        let key = store_key(store);
        let mut out: Vec<(ParamId, Tensor)> = graph
            .params
            .iter()
            .filter(|((k, _), _)| *k == key)
            .map(|(&(_, id), &v)| {
                let g = self
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(graph.shape(v)));
                (id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

fn store_key(store: &ParamStore) -> usize {
    store as *const ParamStore as usize
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            debug_assert_eq!(existing.shape(), g.shape());
            existing
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(e, x)| *e += x);
        }
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        x.shape().to_vec(),
        g.data().iter().zip(x.data()).map(|(&a, &b)| f(a, b)).collect(),
    )
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    assert_eq!(a.len(), b.len(), "broadcast needs equal rank: {a:?} vs {b:?}");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => x,
            (1, _) => y,
            (_, 1) => x,
            _ => panic!("incompatible broadcast {a:?} vs {b:?}"),
        })
        .collect()
}

/// Calls `f(out_index, a_index, b_index)` for every element of `out`, where
/// `a` and `b` broadcast into `out`.
fn for_each_broadcast(out: &[usize], a: &[usize], b: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    let stride_of = |shape: &[usize]| -> Vec<usize> {
        let s = strides(shape);
        (0..rank).map(|d| if shape[d] == 1 { 0 } else { s[d] }).collect()
    };
    let (sa, sb) = (stride_of(a), stride_of(b));
    let n: usize = out.iter().product();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn broadcast_apply(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        return zip_map(a, b, f);
    }
    let shape = broadcast_shape(a.shape(), b.shape());
    let mut out = Tensor::zeros(&shape);
    let od = out.data_mut();
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&shape, a.shape(), b.shape(), |o, ia, ib| {
        od[o] = f(ad[ia], bd[ib]);
    });
    out
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `k`.
fn valid_range(out_len: usize, in_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let top = in_len as isize - 1 + pad as isize - k as isize;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top as usize / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(len + 2 * pad >= k, "kernel larger than padded input");
    (len + 2 * pad - k) / stride + 1
}

fn conv2d_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, wd) = x.dims4();
    let (o, ci, k, k2) = w.dims4();
    assert_eq!(ci, c, "conv input channels");
    assert_eq!(k, k2, "square kernels only");
    let oh = conv_out_len(h, k, stride, pad);
    let ow = conv_out_len(wd, k, stride, pad);
    let mut out = vec![0.0; n * o * oh * ow];
    let (xd, wdat) = (x.data(), w.data());
    out.par_chunks_mut(o * oh * ow).enumerate().for_each(|(ni, out_n)| {
        let xn = &xd[ni * c * h * wd..(ni + 1) * c * h * wd];
        for oc in 0..o {
            let plane = &mut out_n[oc * oh * ow..(oc + 1) * oh * ow];
            if let Some(b) = b {
                plane.fill(b.data()[oc]);
            }
            for ic in 0..c {
                let xp = &xn[ic * h * wd..(ic + 1) * h * wd];
                for ky in 0..k {
                    let (ylo, yhi) = valid_range(oh, h, ky, stride, pad);
                    for kx in 0..k {
                        let wv = wdat[((oc * c + ic) * k + ky) * k + kx];
                        let (xlo, xhi) = valid_range(ow, wd, kx, stride, pad);
                        for oy in ylo..yhi {
                            let iy = oy * stride + ky - pad;
                            let row = &xp[iy * wd..(iy + 1) * wd];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            for ox in xlo..xhi {
                                orow[ox] += wv * row[ox * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![n, o, oh, ow], out)
}

fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
    stride: usize,
    pad: usize,
    want_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (n, c, h, wd) = x.dims4();
    let (o, _, k, _) = w.dims4();
    let (_, _, oh, ow) = g.dims4();
    let (xd, wdat, gd) = (x.data(), w.data(), g.data());
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|ni| {
            let xn = &xd[ni * c * h * wd..(ni + 1) * c * h * wd];
            let gn = &gd[ni * o * oh * ow..(ni + 1) * o * oh * ow];
            let mut dx = if want_dx { vec![0.0; c * h * wd] } else { Vec::new() };
            let mut dw = vec![0.0; w.len()];
            for oc in 0..o {
                let gp = &gn[oc * oh * ow..(oc + 1) * oh * ow];
                for ic in 0..c {
                    let xp = &xn[ic * h * wd..(ic + 1) * h * wd];
                    for ky in 0..k {
                        let (ylo, yhi) = valid_range(oh, h, ky, stride, pad);
                        for kx in 0..k {
                            let widx = ((oc * c + ic) * k + ky) * k + kx;
                            let wv = wdat[widx];
                            let (xlo, xhi) = valid_range(ow, wd, kx, stride, pad);
                            let mut acc = 0.0;
                            for oy in ylo..yhi {
                                let iy = oy * stride + ky - pad;
                                let grow = &gp[oy * ow..(oy + 1) * ow];
                                let xrow = &xp[iy * wd..(iy + 1) * wd];
                                for ox in xlo..xhi {
                                    acc += grow[ox] * xrow[ox * stride + kx - pad];
                                }
                                if want_dx {
                                    let drow = &mut dx[ic * h * wd + iy * wd..ic * h * wd + (iy + 1) * wd];
                                    for ox in xlo..xhi {
                                        drow[ox * stride + kx - pad] += wv * grow[ox];
                                    }
                                }
                            }
                            dw[widx] += acc;
                        }
                    }
                }
            }
            (dx, dw)
        })
        .collect();

    let mut dw = vec![0.0; w.len()];
    let mut dx = if want_dx { Vec::with_capacity(x.len()) } else { Vec::new() };
    for (dxn, dwn) in &per_sample {
        dw.iter_mut().zip(dwn).for_each(|(a, b)| *a += b);
        if want_dx {
            dx.extend_from_slice(dxn);
        }
    }
    let mut db = vec![0.0; o];
    for ni in 0..n {
        for (oc, slot) in db.iter_mut().enumerate() {
            let start = (ni * o + oc) * oh * ow;
            *slot += gd[start..start + oh * ow].iter().sum::<f64>();
        }
    }
    (
        want_dx.then(|| Tensor::new(x.shape().to_vec(), dx)),
        Tensor::new(w.shape().to_vec(), dw),
        Tensor::new(vec![o], db),
    )
}

/// Source taps `(i0, i1, frac)` for each of `out_len` destination samples.
fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn resize_bilinear_forward(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
    let od = out.data_mut();
    let xd = x.data();
    for p in 0..n * c {
        let src = &xd[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                od[(p * out_h + oy) * out_w + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

fn resize_bilinear_backward(in_shape: &[usize], g: &Tensor) -> Tensor {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (_, _, out_h, out_w) = g.dims4();
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    let mut ga = Tensor::zeros(in_shape);
    let gd = ga.data_mut();
    for p in 0..n * c {
        let dst = &mut gd[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let gv = g.data()[(p * out_h + oy) * out_w + ox];
                dst[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += gv * (1.0 - fy) * fx;
                dst[y1 * w + x0] += gv * fy * (1.0 - fx);
                dst[y1 * w + x1] += gv * fy * fx;
            }
        }
    }
    ga
}
