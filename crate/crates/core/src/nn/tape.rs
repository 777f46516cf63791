//! A reverse-mode tape over the handful of operations the segmentation
//! networks need.
//!
//! Parameters are referenced by [`ParamId`] and read straight from the
//! borrowed [`ParamStore`]; only activations live on the tape. Batch
//! normalisation in training mode records its batch statistics as
//! [`StatUpdate`]s that the owner folds into the running averages after the
//! tape is dropped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels;
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, active dropout.
    Train,
    /// Running statistics, dropout disabled.
    Eval,
}

/// Handles for one batch-normalisation layer.
#[derive(Clone, Copy, Debug)]
pub struct BnRef {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub moving_mean: ParamId,
    pub moving_var: ParamId,
    pub eps: f32,
}

#[derive(Clone, Debug)]
pub struct StatUpdate {
    pub moving_mean: ParamId,
    pub moving_var: ParamId,
    pub batch_mean: Vec<f32>,
    pub batch_var: Vec<f32>,
}

enum Op {
    Input,
    Conv {
        x: Var,
        weight: ParamId,
        bias: Option<ParamId>,
        kernel: [usize; 3],
    },
    BatchNorm {
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        batch_stats: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Upsample {
        x: Var,
        factor: [usize; 3],
    },
    Concat(Var, Var),
    Add(Var, Var),
    Dropout {
        x: Var,
        mask: Vec<f32>,
    },
    Reshape(Var),
    SelectChannel {
        x: Var,
        channel: usize,
    },
    GlobalAvgPool(Var),
    Dense {
        x: Var,
        weight: ParamId,
    },
    ScaleChannels {
        x: Var,
        scale: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    mode: Mode,
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
    stat_updates: Vec<StatUpdate>,
    tags: Vec<(String, Var)>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    params: Vec<Option<Vec<f32>>>,
    inputs: Vec<(Var, Tensor)>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&[f32]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn input(&self, v: Var) -> Option<&Tensor> {
        self.inputs.iter().find(|(w, _)| *w == v).map(|(_, t)| t)
    }

    fn accumulate(&mut self, id: ParamId, g: Vec<f32>) {
        match &mut self.params[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }
}

fn check_same(a: Shape, b: Shape, what: &str) -> Result<()> {
    if a.same_extent(&b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!("{what}: {a} vs {b}")))
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore, mode: Mode, seed: u64) -> Self {
        Tape {
            store,
            mode,
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            stat_updates: Vec::new(),
            tags: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var], owns_params: bool) -> Var {
        let requires_grad = owns_params || parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; its gradient is not tracked.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, &[], false)
    }

    /// An input whose gradient is reported by [`Tape::backward`].
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, &[], true)
    }

    /// Names an intermediate activation for later inspection.
    pub fn tag(&mut self, v: Var, name: impl Into<String>) {
        self.tags.push((name.into(), v));
    }

    pub fn tags(&self) -> &[(String, Var)] {
        &self.tags
    }

    pub fn tagged(&self, name: &str) -> Option<Var> {
        self.tags.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn conv(&mut self, x: Var, weight: ParamId, bias: Option<ParamId>, kernel: [usize; 3]) -> Result<Var> {
        let w = self.store.get(weight);
        let xs = self.shape(x);
        let cout = *w.shape.last().unwrap_or(&0);
        let expect = kernel.iter().product::<usize>() * xs.c * cout;
        if w.len() != expect || cout == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} {:?} cannot convolve {xs} with kernel {kernel:?}",
                w.name, w.shape
            )));
        }
        let y = kernels::conv_forward(
            self.value(x),
            &w.data,
            bias.map(|b| self.store.data(b)),
            kernel,
            cout,
        );
        Ok(self.push(
            y,
            Op::Conv {
                x,
                weight,
                bias,
                kernel,
            },
            &[x],
            true,
        ))
    }

    pub fn batch_norm(&mut self, x: Var, bn: &BnRef) -> Result<Var> {
        let xs = self.shape(x);
        let c = xs.c;
        if self.store.get(bn.gamma).len() != c {
            return Err(Error::ShapeMismatch(format!(
                "batch norm {} expects {} channels, input is {xs}",
                self.store.get(bn.gamma).name,
                self.store.get(bn.gamma).len()
            )));
        }
        let batch_stats = self.mode == Mode::Train;
        let (mean, var) = if batch_stats {
            let (m, v) = kernels::channel_moments(self.value(x));
            self.stat_updates.push(StatUpdate {
                moving_mean: bn.moving_mean,
                moving_var: bn.moving_var,
                batch_mean: m.clone(),
                batch_var: v.clone(),
            });
            (m, v)
        } else {
            (
                self.store.data(bn.moving_mean).to_vec(),
                self.store.data(bn.moving_var).to_vec(),
            )
        };
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
        let gamma = self.store.data(bn.gamma);
        let beta = self.store.data(bn.beta);
        let src = self.value(x).data();
        let mut xhat = vec![0.0f32; src.len()];
        let mut y = vec![0.0f32; src.len()];
        for ((xr, hr), yr) in src
            .chunks_exact(c)
            .zip(xhat.chunks_exact_mut(c))
            .zip(y.chunks_exact_mut(c))
        {
            for ch in 0..c {
                let h = (xr[ch] - mean[ch]) * inv_std[ch];
                hr[ch] = h;
                yr[ch] = gamma[ch] * h + beta[ch];
            }
        }
        let y = Tensor::new(xs, y)?;
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma: bn.gamma,
                beta: bn.beta,
                xhat,
                inv_std,
                batch_stats,
            },
            &[x],
            true,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        // NaN passes through so a corrupt batch surfaces in the loss
        y.data_mut().iter_mut().for_each(|v| *v = if *v < 0.0 { 0.0 } else { *v });
        self.push(y, Op::Relu(x), &[x], false)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        y.data_mut().iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
        self.push(y, Op::Sigmoid(x), &[x], false)
    }

    pub fn max_pool(&mut self, x: Var, factor: [usize; 3]) -> Result<Var> {
        let s = self.shape(x);
        if s.h < factor[0] || s.w < factor[1] || s.d < factor[2] {
            return Err(Error::ShapeMismatch(format!("cannot pool {s} by {factor:?}")));
        }
        let (y, argmax) = kernels::max_pool_forward(self.value(x), factor);
        Ok(self.push(y, Op::MaxPool { x, argmax }, &[x], false))
    }

    pub fn upsample(&mut self, x: Var, factor: [usize; 3]) -> Var {
        let y = kernels::upsample_forward(self.value(x), factor);
        self.push(y, Op::Upsample { x, factor }, &[x], false)
    }

    /// Channel concatenation `[a, b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        check_same(sa.with_channels(1), sb.with_channels(1), "concat")?;
        let (ca, cb) = (sa.c, sb.c);
        let mut out = Vec::with_capacity(sa.len() + sb.len());
        for (ra, rb) in self
            .value(a)
            .data()
            .chunks_exact(ca)
            .zip(self.value(b).data().chunks_exact(cb))
        {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        let y = Tensor::new(sa.with_channels(ca + cb), out)?;
        Ok(self.push(y, Op::Concat(a, b), &[a, b], false))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.shape(a), self.shape(b), "add")?;
        let mut y = self.value(a).clone();
        y.data_mut()
            .iter_mut()
            .zip(self.value(b).data())
            .for_each(|(o, v)| *o += v);
        Ok(self.push(y, Op::Add(a, b), &[a, b], false))
    }

    /// Inverted dropout; identity outside training mode.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if self.mode == Mode::Eval || rate <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - rate) as f32;
        let len = self.value(x).len();
        let mask: Vec<f32> = (0..len)
            .map(|_| if self.rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mut y = self.value(x).clone();
        y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.push(y, Op::Dropout { x, mask }, &[x], false)
    }

    /// Reinterprets the buffer under `shape` (same element count).
    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape(x), &[x], false))
    }

    pub fn select_channel(&mut self, x: Var, channel: usize) -> Result<Var> {
        let s = self.shape(x);
        if channel >= s.c {
            return Err(Error::ShapeMismatch(format!("channel {channel} out of range for {s}")));
        }
        let data: Vec<f32> = self
            .value(x)
            .data()
            .chunks_exact(s.c)
            .map(|r| r[channel])
            .collect();
        let y = Tensor::new(s.with_channels(1), data)?;
        Ok(self.push(y, Op::SelectChannel { x, channel }, &[x], false))
    }

    /// Mean over all spatial positions: `n×…×c → n×1×1×c`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let per = s.spatial();
        let mut out = vec![0.0f32; s.n * s.c];
        for n in 0..s.n {
            let mut acc = vec![0.0f64; s.c];
            for row in self.value(x).data()[n * per * s.c..(n + 1) * per * s.c].chunks_exact(s.c) {
                acc.iter_mut().zip(row).for_each(|(a, v)| *a += *v as f64);
            }
            for (o, a) in out[n * s.c..(n + 1) * s.c].iter_mut().zip(acc) {
                *o = (a / per as f64) as f32;
            }
        }
        let y = Tensor::new(Shape::planar(s.n, 1, 1, s.c), out).expect("gap shape");
        self.push(y, Op::GlobalAvgPool(x), &[x], false)
    }

    /// Bias-free fully connected layer on `n×1×1×cin`; weight is `cin×cout`.
    pub fn dense(&mut self, x: Var, weight: ParamId) -> Result<Var> {
        let s = self.shape(x);
        let w = self.store.get(weight);
        let (cin, cout) = (w.shape[0], w.shape[1]);
        if s.spatial() != 1 || s.c != cin {
            return Err(Error::ShapeMismatch(format!("dense {} {:?} on {s}", w.name, w.shape)));
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0f32; s.n * cout];
        for n in 0..s.n {
            for i in 0..cin {
                let xi = xv[n * cin + i];
                for (o, wv) in out[n * cout..(n + 1) * cout].iter_mut().zip(&w.data[i * cout..(i + 1) * cout]) {
                    *o += xi * wv;
                }
            }
        }
        let y = Tensor::new(Shape::planar(s.n, 1, 1, cout), out)?;
        Ok(self.push(y, Op::Dense { x, weight }, &[x], true))
    }

    /// `x[n, …, c] · scale[n, c]`.
    pub fn scale_channels(&mut self, x: Var, scale: Var) -> Result<Var> {
        let (s, ss) = (self.shape(x), self.shape(scale));
        if ss.n != s.n || ss.c != s.c || ss.spatial() != 1 {
            return Err(Error::ShapeMismatch(format!("scale {ss} against {s}")));
        }
        let per = s.spatial() * s.c;
        let mut y = self.value(x).clone();
        let sc = self.value(scale).data();
        for n in 0..s.n {
            for row in y.data_mut()[n * per..(n + 1) * per].chunks_exact_mut(s.c) {
                row.iter_mut().zip(&sc[n * s.c..(n + 1) * s.c]).for_each(|(v, k)| *v *= k);
            }
        }
        Ok(self.push(y, Op::ScaleChannels { x, scale }, &[x, scale], false))
    }

    pub fn into_stat_updates(self) -> Vec<StatUpdate> {
        self.stat_updates
    }

    /// Back-propagates `grad` (shaped like `out`) through the tape.
    pub fn backward(&self, out: Var, grad: Tensor) -> Result<Gradients> {
        check_same(self.shape(out), grad.shape(), "output gradient")?;
        let mut grads = Gradients {
            params: vec![None; self.store.len()],
            inputs: Vec::new(),
        };
        let mut node_grads: Vec<Option<Tensor>> = (0..=out.0).map(|_| None).collect();
        node_grads[out.0] = Some(grad);
        for i in (0..=out.0).rev() {
            let Some(g) = node_grads[i].take() else { continue };
            let node = &self.nodes[i];
            let send = |v: Var, t: Tensor, node_grads: &mut Vec<Option<Tensor>>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut node_grads[v.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(t.data())
                        .for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Input => grads.inputs.push((Var(i), g)),
                Op::Conv {
                    x,
                    weight,
                    bias,
                    kernel,
                } => {
                    let need = self.nodes[x.0].requires_grad;
                    let cg = kernels::conv_backward(
                        self.value(*x),
                        self.store.data(*weight),
                        *kernel,
                        &g,
                        need,
                    );
                    grads.accumulate(*weight, cg.weight);
                    if let Some(b) = bias {
                        grads.accumulate(*b, cg.bias);
                    }
                    if let Some(dx) = cg.input {
                        send(*x, dx, &mut node_grads);
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let c = inv_std.len();
                    let gam = self.store.data(*gamma);
                    let mut dgamma = vec![0.0f64; c];
                    let mut dbeta = vec![0.0f64; c];
                    for (gr, hr) in g.data().chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for ch in 0..c {
                            dgamma[ch] += (gr[ch] * hr[ch]) as f64;
                            dbeta[ch] += gr[ch] as f64;
                        }
                    }
                    let count = (g.len() / c) as f64;
                    let mut dx = vec![0.0f32; g.len()];
                    for ((dr, gr), hr) in dx
                        .chunks_exact_mut(c)
                        .zip(g.data().chunks_exact(c))
                        .zip(xhat.chunks_exact(c))
                    {
                        for ch in 0..c {
                            let scale = gam[ch] * inv_std[ch];
                            dr[ch] = if *batch_stats {
                                let mean_g = (dbeta[ch] / count) as f32;
                                let mean_gh = (dgamma[ch] / count) as f32;
                                scale * (gr[ch] - mean_g - hr[ch] * mean_gh)
                            } else {
                                scale * gr[ch]
                            };
                        }
                    }
                    grads.accumulate(*gamma, dgamma.into_iter().map(|v| v as f32).collect());
                    grads.accumulate(*beta, dbeta.into_iter().map(|v| v as f32).collect());
                    send(*x, Tensor::new(g.shape(), dx)?, &mut node_grads);
                }
                Op::Relu(x) => {
                    let mut dx = g;
                    dx.data_mut()
                        .iter_mut()
                        .zip(node.value.data())
                        .for_each(|(d, y)| {
                            if *y <= 0.0 {
                                *d = 0.0
                            }
                        });
                    send(*x, dx, &mut node_grads);
                }
                Op::Sigmoid(x) => {
                    let mut dx = g;
                    dx.data_mut()
                        .iter_mut()
                        .zip(node.value.data())
                        .for_each(|(d, y)| *d *= y * (1.0 - y));
                    send(*x, dx, &mut node_grads);
                }
                Op::MaxPool { x, argmax } => {
                    let dx = kernels::max_pool_backward(self.shape(*x), argmax, &g);
                    send(*x, dx, &mut node_grads);
                }
                Op::Upsample { x, factor } => {
                    let dx = kernels::upsample_backward(self.shape(*x), *factor, &g);
                    send(*x, dx, &mut node_grads);
                }
                Op::Concat(a, b) => {
                    let (ca, cb) = (self.shape(*a).c, self.shape(*b).c);
                    let mut da = Vec::with_capacity(self.value(*a).len());
                    let mut db = Vec::with_capacity(self.value(*b).len());
                    for row in g.data().chunks_exact(ca + cb) {
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    send(*a, Tensor::new(self.shape(*a), da)?, &mut node_grads);
                    send(*b, Tensor::new(self.shape(*b), db)?, &mut node_grads);
                }
                Op::Add(a, b) => {
                    let ga = Tensor::new(self.shape(*a), g.data().to_vec())?;
                    send(*a, ga, &mut node_grads);
                    send(*b, g.reshape(self.shape(*b))?, &mut node_grads);
                }
                Op::Dropout { x, mask } => {
                    let mut dx = g;
                    dx.data_mut().iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
                    send(*x, dx, &mut node_grads);
                }
                Op::Reshape(x) => send(*x, g.reshape(self.shape(*x))?, &mut node_grads),
                Op::SelectChannel { x, channel } => {
                    let s = self.shape(*x);
                    let mut dx = vec![0.0f32; s.len()];
                    for (row, gv) in dx.chunks_exact_mut(s.c).zip(g.data()) {
                        row[*channel] = *gv;
                    }
                    send(*x, Tensor::new(s, dx)?, &mut node_grads);
                }
                Op::GlobalAvgPool(x) => {
                    let s = self.shape(*x);
                    let per = s.spatial();
                    let mut dx = vec![0.0f32; s.len()];
                    for n in 0..s.n {
                        let gn = &g.data()[n * s.c..(n + 1) * s.c];
                        for row in dx[n * per * s.c..(n + 1) * per * s.c].chunks_exact_mut(s.c) {
                            row.iter_mut().zip(gn).for_each(|(d, v)| *d = v / per as f32);
                        }
                    }
                    send(*x, Tensor::new(s, dx)?, &mut node_grads);
                }
                Op::Dense { x, weight } => {
                    let w = self.store.get(*weight);
                    let (cin, cout) = (w.shape[0], w.shape[1]);
                    let xs = self.shape(*x);
                    let xv = self.value(*x).data();
                    let mut dw = vec![0.0f32; cin * cout];
                    let mut dx = vec![0.0f32; xs.len()];
                    for n in 0..xs.n {
                        let gn = &g.data()[n * cout..(n + 1) * cout];
                        for i in 0..cin {
                            let wr = &w.data[i * cout..(i + 1) * cout];
                            let dwr = &mut dw[i * cout..(i + 1) * cout];
                            let mut acc = 0.0f32;
                            for o in 0..cout {
                                dwr[o] += xv[n * cin + i] * gn[o];
                                acc += wr[o] * gn[o];
                            }
                            dx[n * cin + i] = acc;
                        }
                    }
                    grads.accumulate(*weight, dw);
                    send(*x, Tensor::new(xs, dx)?, &mut node_grads);
                }
                Op::ScaleChannels { x, scale } => {
                    let s = self.shape(*x);
                    let per = s.spatial() * s.c;
                    let xv = self.value(*x).data();
                    let sc = self.value(*scale).data();
                    let mut dx = g.data().to_vec();
                    let mut ds = vec![0.0f64; s.n * s.c];
                    for n in 0..s.n {
                        let range = n * per..(n + 1) * per;
                        for (dr, xr) in dx[range.clone()].chunks_exact_mut(s.c).zip(xv[range].chunks_exact(s.c)) {
                            for ch in 0..s.c {
                                ds[n * s.c + ch] += (dr[ch] * xr[ch]) as f64;
                                dr[ch] *= sc[n * s.c + ch];
                            }
                        }
                    }
                    send(*x, Tensor::new(s, dx)?, &mut node_grads);
                    let ds = ds.into_iter().map(|v| v as f32).collect();
                    send(*scale, Tensor::new(self.shape(*scale), ds)?, &mut node_grads);
                }
            }
        }
        Ok(grads)
    }
}
