//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the nodes in reverse creation order, which is a valid topological
//! order because inputs always precede the nodes that consume them.

use std::borrow::Cow;

use super::kernels::{conv2d_backward, conv2d_forward, gemm, ConvGeometry};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Stride, padding and group count of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub const POINTWISE: ConvSpec = ConvSpec {
        stride: 1,
        pad: 0,
        groups: 1,
    };
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    Relu(Var),
    Add(Var, Var),
    AvgPool2(Var),
    GlobalAvgPool(Var),
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Sigmoid(Var),
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    WeightedSum {
        x: Var,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    param: Option<usize>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<Option<usize>>,
}

impl Gradients {
    /// Gradient with respect to a node, if that node was reached.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// One gradient tensor per parameter of `store`; parameters the loss does
    /// not depend on get exact zeros.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        for (node, param) in self.params.iter().enumerate() {
            if let (Some(p), Some(g)) = (param, &self.grads[node]) {
                for (o, v) in out[*p].data_mut().iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
        out
    }
}

#[derive(Debug, Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, param: Option<usize>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::State(format!("variable {} does not belong to this graph", v.0)))
        }
    }

    /// Constant input; no gradient is computed for it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, None, false)
    }

    /// Input that receives a gradient (used for gradient checks).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, None, true)
    }

    /// Borrowed parameter `index` of `store`.
    pub fn param(&mut self, store: &'p ParamStore, index: usize) -> Var {
        self.push(Cow::Borrowed(&store.tensors()[index]), Op::Leaf, Some(index), true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, c, h, wd) = xv.dims4()?;
        let (co, ci_g, kh, kw) = wv.dims4()?;
        let mismatch = || {
            Error::validation(format!(
                "conv2d shape mismatch: input {:?}, kernel {:?}, groups {}",
                xv.shape(),
                wv.shape(),
                spec.groups
            ))
        };
        if spec.groups == 0
            || spec.stride == 0
            || kh != kw
            || c % spec.groups != 0
            || co % spec.groups != 0
            || ci_g != c / spec.groups
            || h + 2 * spec.pad < kh
            || wd + 2 * spec.pad < kw
        {
            return Err(mismatch());
        }
        if let Some(b) = b {
            self.check(b)?;
            if self.value(b).shape() != [co] {
                return Err(Error::validation(format!(
                    "conv2d bias shape {:?} does not match {co} output channels",
                    self.value(b).shape()
                )));
            }
        }
        let geom = ConvGeometry {
            batch: n,
            in_channels: c,
            in_h: h,
            in_w: wd,
            out_channels: co,
            kernel: kh,
            stride: spec.stride,
            pad: spec.pad,
            groups: spec.groups,
        };
        let out = conv2d_forward(xv.data(), wv.data(), b.map(|b| self.value(b).data()), &geom);
        let t = Tensor::new(vec![n, co, geom.out_h(), geom.out_w()], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Cow::Owned(t), Op::Conv2d { x, w, b, geom }, None, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(t), Op::Relu(x), None, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::validation(format!(
                "add shape mismatch: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(t), Op::Add(a, b), None, rg))
    }

    /// 2×2 average pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4()?;
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(Error::validation(format!("cannot pool a {h}x{w} map")));
        }
        let src = xv.data();
        let mut out = vec![0.0; n * c * ho * wo];
        for nc in 0..n * c {
            let plane = &src[nc * h * w..][..h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let (y, x) = (2 * oy, 2 * ox);
                    out[(nc * ho + oy) * wo + ox] = 0.25
                        * (plane[y * w + x]
                            + plane[y * w + x + 1]
                            + plane[(y + 1) * w + x]
                            + plane[(y + 1) * w + x + 1]);
                }
            }
        }
        let t = Tensor::new(vec![n, c, ho, wo], out)?;
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(t), Op::AvgPool2(x), None, rg))
    }

    /// `(N, C, H, W)` → `(N, C)` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4()?;
        let plane = h * w;
        let out = xv
            .data()
            .chunks_exact(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let t = Tensor::new(vec![n, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(t), Op::GlobalAvgPool(x), None, rg))
    }

    /// `y = x · wᵀ + b` for `x: (N, In)`, `w: (Out, In)`, `b: (Out)`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, inp, out_f) = match (xv.shape(), wv.shape(), bv.shape()) {
            (&[n, i], &[o, i2], &[o2]) if i == i2 && o == o2 => (n, i, o),
            _ => {
                return Err(Error::validation(format!(
                    "dense shape mismatch: input {:?}, weight {:?}, bias {:?}",
                    xv.shape(),
                    wv.shape(),
                    bv.shape()
                )))
            }
        };
        let mut y = vec![0.0; n * out_f];
        for row in y.chunks_exact_mut(out_f) {
            row.copy_from_slice(bv.data());
        }
        gemm(n, inp, out_f, xv.data(), false, wv.data(), true, &mut y, 1.0);
        let t = Tensor::new(vec![n, out_f], y)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Cow::Owned(t), Op::Dense { x, w, b }, None, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| sigmoid(v)).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(t), Op::Sigmoid(x), None, rg))
    }

    /// Mean squared error against a constant target, as a scalar node.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        self.check(pred)?;
        let loss = mse_loss(self.value(pred).data(), target)?;
        let rg = self.rg(pred);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(loss)),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            None,
            rg,
        ))
    }

    /// `Σ x_i · weights_i` as a scalar node.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        if xv.len() != weights.len() {
            return Err(Error::validation(format!(
                "weighted_sum: {} values, {} weights",
                xv.len(),
                weights.len()
            )));
        }
        let s = xv.data().iter().zip(weights).map(|(a, b)| a * b).sum();
        let rg = self.rg(x);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(s)),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
            None,
            rg,
        ))
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called before any forward pass".into()));
        }
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(dy);
                    continue;
                }
                Op::Conv2d { x, w, b, geom } => {
                    let xv = self.value(*x).data();
                    let wv = self.value(*w).data();
                    let mut dx = self.rg(*x).then(|| vec![0.0; xv.len()]);
                    let mut dw = vec![0.0; wv.len()];
                    let mut db = b.filter(|b| self.rg(*b)).map(|_| vec![0.0; geom.out_channels]);
                    conv2d_backward(xv, wv, &dy, geom, dx.as_deref_mut(), &mut dw, db.as_deref_mut());
                    if let Some(dx) = dx {
                        add_into(&mut grads[x.0], &dx);
                    }
                    if self.rg(*w) {
                        add_into(&mut grads[w.0], &dw);
                    }
                    if let (Some(b), Some(db)) = (b, db) {
                        add_into(&mut grads[b.0], &db);
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    let g = accumulate(&mut grads[x.0], xv.len());
                    for ((gi, &d), &v) in g.iter_mut().zip(&dy).zip(xv) {
                        if v > 0.0 {
                            *gi += d;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        if self.rg(*v) {
                            add_into(&mut grads[v.0], &dy);
                        }
                    }
                }
                Op::AvgPool2(x) => {
                    let (n, c, h, w) = self.value(*x).dims4()?;
                    let (ho, wo) = (h / 2, w / 2);
                    let g = accumulate(&mut grads[x.0], n * c * h * w);
                    for nc in 0..n * c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let d = 0.25 * dy[(nc * ho + oy) * wo + ox];
                                let base = nc * h * w + 2 * oy * w + 2 * ox;
                                g[base] += d;
                                g[base + 1] += d;
                                g[base + w] += d;
                                g[base + w + 1] += d;
                            }
                        }
                    }
                }
                Op::GlobalAvgPool(x) => {
                    let (n, c, h, w) = self.value(*x).dims4()?;
                    let plane = h * w;
                    let g = accumulate(&mut grads[x.0], n * c * plane);
                    for (chunk, &d) in g.chunks_exact_mut(plane).zip(&dy) {
                        let d = d / plane as f64;
                        for v in chunk {
                            *v += d;
                        }
                    }
                }
                Op::Dense { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (n, inp) = (xv.shape()[0], xv.shape()[1]);
                    let out_f = wv.shape()[0];
                    if self.rg(*x) {
                        let g = accumulate(&mut grads[x.0], n * inp);
                        gemm(n, out_f, inp, &dy, false, wv.data(), false, g, 1.0);
                    }
                    if self.rg(*w) {
                        let g = accumulate(&mut grads[w.0], out_f * inp);
                        gemm(out_f, n, inp, &dy, true, xv.data(), false, g, 1.0);
                    }
                    if self.rg(*b) {
                        let g = accumulate(&mut grads[b.0], out_f);
                        for row in dy.chunks_exact(out_f) {
                            for (gi, d) in g.iter_mut().zip(row) {
                                *gi += d;
                            }
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let g = accumulate(&mut grads[x.0], y.len());
                    for ((gi, &d), &yv) in g.iter_mut().zip(&dy).zip(y) {
                        *gi += d * yv * (1.0 - yv);
                    }
                }
                Op::Mse { pred, target } => {
                    let p = self.value(*pred).data();
                    let scale = 2.0 * dy[0] / p.len() as f64;
                    let g = accumulate(&mut grads[pred.0], p.len());
                    for ((gi, pv), tv) in g.iter_mut().zip(p).zip(target) {
                        *gi += scale * (pv - tv);
                    }
                }
                Op::WeightedSum { x, weights } => {
                    let g = accumulate(&mut grads[x.0], weights.len());
                    for (gi, w) in g.iter_mut().zip(weights) {
                        *gi += dy[0] * w;
                    }
                }
            }
        }
        Ok(Gradients {
            grads,
            params: self.nodes.iter().map(|n| n.param).collect(),
        })
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, src: &[f64]) {
    match slot {
        Some(dst) => {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        None => *slot = Some(src.to_vec()),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean of squared differences.
pub fn mse_loss(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::validation(format!(
            "mse_loss needs equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}
