use std::collections::{BTreeMap, HashMap};

use super::kernels::{self, ConvSpec};
use super::params::ParamStore;
use super::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat(Vec<Var>),
    Resize(Var),
    GlobalAvg(Var),
    GlobalMax {
        x: Var,
        argmax: Vec<usize>,
    },
    ChannelMean(Var),
    ChannelMax {
        x: Var,
        argmax: Vec<usize>,
    },
    /// Scalar computed outside the graph with a known gradient w.r.t. `x`.
    External {
        x: Var,
        grad: Tensor,
    },
    SumScalars(Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct StatUpdate {
    pub mean_key: String,
    pub var_key: String,
    pub batch_mean: Vec<f64>,
    pub batch_var_unbiased: Vec<f64>,
}

/// A reverse-mode autodiff tape over [`Tensor`] values.
///
/// Parameters are read from a [`ParamStore`] when first referenced and
/// reused for later references within the same graph.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<String, Var>,
    training: bool,
    stat_updates: Vec<StatUpdate>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore, training: bool) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            training,
            stat_updates: Vec::new(),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape()
    }

    /// A value that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives gradients (used for input-gradient checks).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, key: &str) -> Var {
        if let Some(&v) = self.param_vars.get(key) {
            return v;
        }
        let value = self
            .store
            .get(key)
            .unwrap_or_else(|| panic!("unknown parameter `{key}`"))
            .clone();
        let v = self.push(value, Op::Param, true);
        self.param_vars.insert(key.to_string(), v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Var {
        let out = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), spec);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(out, Op::Conv { x, w, b, spec }, rg)
    }

    fn broadcast_shape(a: [usize; 4], b: [usize; 4]) -> [usize; 4] {
        let mut out = [0; 4];
        for d in 0..4 {
            out[d] = match (a[d], b[d]) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => panic!("cannot broadcast {a:?} with {b:?}"),
            };
        }
        out
    }

    fn broadcast_zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        let out = Self::broadcast_shape(sa, sb);
        if sa == sb {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            return Tensor::from_vec(out, data);
        }
        Tensor::from_fn(out, |[n, c, y, x]| {
            let ia = ta.at(n.min(sa[0] - 1), c.min(sa[1] - 1), y.min(sa[2] - 1), x.min(sa[3] - 1));
            let ib = tb.at(n.min(sb[0] - 1), c.min(sb[1] - 1), y.min(sb[2] - 1), x.min(sb[3] - 1));
            f(ia, ib)
        })
    }

    /// Elementwise sum with unit-dimension broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.broadcast_zip(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// Elementwise product with unit-dimension broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.broadcast_zip(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|v| v * k);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// Batch normalisation over `(n, h, w)` per channel.
    ///
    /// In training mode the batch statistics are used and a running-stat
    /// update is queued (see [`Graph::stat_updates`]); otherwise the stored
    /// running statistics under `mean_key`/`var_key` are used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean_key: &str,
        var_key: &str,
        eps: f64,
    ) -> Var {
        let tx = self.value(x).clone();
        let [n, c, h, w] = tx.shape();
        let (mean, var) = if self.training {
            let (m, v) = kernels::channel_moments(&tx);
            let count = (n * h * w) as f64;
            let unbiased = v
                .iter()
                .map(|&v| if count > 1.0 { v * count / (count - 1.0) } else { v })
                .collect();
            self.stat_updates.push(StatUpdate {
                mean_key: mean_key.to_string(),
                var_key: var_key.to_string(),
                batch_mean: m.clone(),
                batch_var_unbiased: unbiased,
            });
            (m, v)
        } else {
            let m = self.store.buffer(mean_key).expect("missing running mean").data().to_vec();
            let v = self.store.buffer(var_key).expect("missing running var").data().to_vec();
            (m, v)
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut xhat = tx.clone();
        let mut out = tx;
        for s in 0..n {
            for ch in 0..c {
                let off = xhat.offset(s, ch, 0, 0);
                for i in off..off + h * w {
                    let xh = (out.data()[i] - mean[ch]) * inv_std[ch];
                    xhat.data_mut()[i] = xh;
                    out.data_mut()[i] = g[ch] * xh + b[ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let batch_stats = self.training;
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        )
    }

    pub fn max_pool(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let (out, argmax) = kernels::max_pool_forward(self.value(x), kernel, stride, pad);
        let rg = self.rg(x);
        self.push(out, Op::MaxPool { x, argmax }, rg)
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let [n, _, h, w] = self.shape(parts[0]);
        let mut c_total = 0;
        for &p in parts {
            let s = self.shape(p);
            assert!(
                s[0] == n && s[2] == h && s[3] == w,
                "concat spatial mismatch: {:?} vs {:?}",
                s,
                [n, 0, h, w]
            );
            c_total += s[1];
        }
        let mut data = Vec::with_capacity(n * c_total * h * w);
        for s in 0..n {
            for &p in parts {
                let t = self.value(p);
                let per = t.shape()[1] * h * w;
                data.extend_from_slice(&t.data()[s * per..(s + 1) * per]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::from_vec([n, c_total, h, w], data), Op::Concat(parts.to_vec()), rg)
    }

    /// Bilinear resize (half-pixel centres) to `oh x ow`.
    pub fn resize(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let out = kernels::resize_forward(self.value(x), oh, ow);
        let rg = self.rg(x);
        self.push(out, Op::Resize(x), rg)
    }

    pub fn upsample(&mut self, x: Var, factor: usize) -> Var {
        let [_, _, h, w] = self.shape(x);
        self.resize(x, h * factor, w * factor)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        let out = Tensor::from_fn([n, c, 1, 1], |[s, ch, _, _]| {
            t.plane(s, ch).iter().sum::<f64>() / (h * w) as f64
        });
        let rg = self.rg(x);
        self.push(out, Op::GlobalAvg(x), rg)
    }

    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let [n, c, _, _] = t.shape();
        let mut argmax = Vec::with_capacity(n * c);
        let mut data = Vec::with_capacity(n * c);
        for s in 0..n {
            for ch in 0..c {
                let off = t.offset(s, ch, 0, 0);
                let (i, v) = argmax_of(t.plane(s, ch));
                argmax.push(off + i);
                data.push(v);
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::from_vec([n, c, 1, 1], data), Op::GlobalMax { x, argmax }, rg)
    }

    /// Mean over channels, giving a single-channel map.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        let out = Tensor::from_fn([n, 1, h, w], |[s, _, y, xx]| {
            (0..c).map(|ch| t.at(s, ch, y, xx)).sum::<f64>() / c as f64
        });
        let rg = self.rg(x);
        self.push(out, Op::ChannelMean(x), rg)
    }

    /// Max over channels, giving a single-channel map.
    pub fn channel_max(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        let mut argmax = Vec::with_capacity(n * h * w);
        let mut data = Vec::with_capacity(n * h * w);
        for s in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for ch in 0..c {
                        let i = t.offset(s, ch, y, xx);
                        if t.data()[i] > best {
                            best = t.data()[i];
                            best_i = i;
                        }
                    }
                    argmax.push(best_i);
                    data.push(best);
                }
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::from_vec([n, 1, h, w], data), Op::ChannelMax { x, argmax }, rg)
    }

    /// Attaches a scalar computed outside the graph together with its
    /// gradient with respect to `x`.
    pub fn external_scalar(&mut self, x: Var, value: f64, grad: Tensor) -> Var {
        assert_eq!(grad.shape(), self.shape(x), "external gradient shape mismatch");
        let rg = self.rg(x);
        self.push(Tensor::scalar(value), Op::External { x, grad }, rg)
    }

    pub fn sum_scalars(&mut self, terms: &[Var]) -> Var {
        let total: f64 = terms.iter().map(|&t| self.value(t).item()).sum();
        let rg = terms.iter().any(|&t| self.rg(t));
        self.push(Tensor::scalar(total), Op::SumScalars(terms.to_vec()), rg)
    }

    /// Running-statistics updates queued by training-mode batch norms.
    pub fn stat_updates(&self) -> &[StatUpdate] {
        &self.stat_updates
    }

    /// Reverse-mode pass from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).numel(), 1, "backward from non-scalar node");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .param_vars
            .iter()
            .filter_map(|(k, v)| grads[v.0].clone().map(|g| (k.clone(), g)))
            .collect();
        Gradients { grads, params }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Sums a broadcast gradient back down to `shape`.
    fn reduce_to(g: Tensor, shape: [usize; 4]) -> Tensor {
        if g.shape() == shape {
            return g;
        }
        let gs = g.shape();
        let mut out = Tensor::zeros(shape);
        for n in 0..gs[0] {
            for c in 0..gs[1] {
                for y in 0..gs[2] {
                    for x in 0..gs[3] {
                        let o = out.offset(n.min(shape[0] - 1), c.min(shape[1] - 1), y.min(shape[2] - 1), x.min(shape[3] - 1));
                        out.data_mut()[o] += g.at(n, c, y, x);
                    }
                }
            }
        }
        out
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv { x, w, b, spec } => {
                let cg = kernels::conv2d_backward(self.value(*x), self.value(*w), g, *spec, self.rg(*x));
                if let Some(dx) = cg.dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, cg.dw);
                if let Some(b) = b {
                    let shape = self.shape(*b);
                    self.accumulate(grads, *b, Tensor::from_vec(shape, cg.db.into_vec()));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, Self::reduce_to(g.clone(), self.shape(*a)));
                self.accumulate(grads, *b, Self::reduce_to(g.clone(), self.shape(*b)));
            }
            Op::Mul(a, b) => {
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if !self.rg(this) {
                        continue;
                    }
                    let so = self.shape(other);
                    let to = self.value(other);
                    let full = Tensor::from_fn(g.shape(), |[n, c, y, x]| {
                        g.at(n, c, y, x) * to.at(n.min(so[0] - 1), c.min(so[1] - 1), y.min(so[2] - 1), x.min(so[3] - 1))
                    });
                    self.accumulate(grads, this, Self::reduce_to(full, self.shape(this)));
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g.map(|v| v * k)),
            Op::Relu(a) => {
                let x = self.value(*a);
                let data = g.data().iter().zip(x.data()).map(|(&g, &x)| if x > 0.0 { g } else { 0.0 }).collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.shape(), data));
            }
            Op::Sigmoid(a) => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&g, &s)| g * s * (1.0 - s))
                    .collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.shape(), data));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let [n, c, h, w] = g.shape();
                let count = (n * h * w) as f64;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ch in 0..c {
                    for s in 0..n {
                        let off = g.offset(s, ch, 0, 0);
                        for i in off..off + h * w {
                            dgamma[ch] += g.data()[i] * xhat.data()[i];
                            dbeta[ch] += g.data()[i];
                        }
                    }
                }
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(g.shape());
                    for ch in 0..c {
                        let k = gam[ch] * inv_std[ch];
                        for s in 0..n {
                            let off = g.offset(s, ch, 0, 0);
                            for i in off..off + h * w {
                                dx.data_mut()[i] = if *batch_stats {
                                    k * (g.data()[i] - dbeta[ch] / count - xhat.data()[i] * dgamma[ch] / count)
                                } else {
                                    k * g.data()[i]
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                let gs = self.shape(*gamma);
                self.accumulate(grads, *gamma, Tensor::from_vec(gs, dgamma));
                let bs = self.shape(*beta);
                self.accumulate(grads, *beta, Tensor::from_vec(bs, dbeta));
            }
            Op::MaxPool { x, argmax } | Op::GlobalMax { x, argmax } | Op::ChannelMax { x, argmax } => {
                let mut dx = Tensor::zeros(self.shape(*x));
                for (o, &i) in argmax.iter().enumerate() {
                    if i != usize::MAX {
                        dx.data_mut()[i] += g.data()[o];
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Concat(parts) => {
                let [n, _, h, w] = g.shape();
                let total_c = g.shape()[1];
                let mut c0 = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    if self.rg(p) {
                        let mut data = Vec::with_capacity(n * pc * h * w);
                        for s in 0..n {
                            let start = (s * total_c + c0) * h * w;
                            data.extend_from_slice(&g.data()[start..start + pc * h * w]);
                        }
                        self.accumulate(grads, p, Tensor::from_vec([n, pc, h, w], data));
                    }
                    c0 += pc;
                }
            }
            Op::Resize(x) => {
                let dx = kernels::resize_backward(g, self.shape(*x));
                self.accumulate(grads, *x, dx);
            }
            Op::GlobalAvg(x) => {
                let [n, c, h, w] = self.shape(*x);
                let inv = 1.0 / (h * w) as f64;
                let dx = Tensor::from_fn([n, c, h, w], |[s, ch, _, _]| g.at(s, ch, 0, 0) * inv);
                self.accumulate(grads, *x, dx);
            }
            Op::ChannelMean(x) => {
                let [n, c, h, w] = self.shape(*x);
                let inv = 1.0 / c as f64;
                let dx = Tensor::from_fn([n, c, h, w], |[s, _, y, xx]| g.at(s, 0, y, xx) * inv);
                self.accumulate(grads, *x, dx);
            }
            Op::External { x, grad } => {
                let k = g.item();
                self.accumulate(grads, *x, grad.map(|v| v * k));
            }
            Op::SumScalars(terms) => {
                for &t in terms {
                    self.accumulate(grads, t, g.clone());
                }
            }
        }
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every parameter referenced by the graph, keyed by name.
    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn argmax_of(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}
