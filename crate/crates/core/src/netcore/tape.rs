//! Reverse-mode differentiation over a recorded sequence of network ops.
//!
//! Each op is evaluated eagerly as it is recorded; [`Tape::backward`] then
//! walks the nodes in reverse, accumulating node gradients and parameter
//! gradients.

use super::kernels::{conv_backward, conv_forward, ConvGeometry};
use super::params::{Gradients, ParamId, Params};
use super::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Vec<f64>,
    /// Unbiased batch variance.
    pub batch_var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Input,
    Conv {
        x: NodeId,
        w: ParamId,
        geom: ConvGeometry,
    },
    BatchNorm {
        x: NodeId,
        gamma: ParamId,
        beta: ParamId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        /// Whether the normalization statistics depend on the batch.
        batch_stats: bool,
    },
    Relu {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    GlobalAvgPool {
        x: NodeId,
    },
    Dense {
        x: NodeId,
        w: ParamId,
        b: ParamId,
    },
    Softmax {
        x: NodeId,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bn_updates: Vec<BnUpdate>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    pub fn input(&mut self, x: Tensor) -> NodeId {
        self.push(Op::Input, x)
    }

    /// Grouped 1-D convolution without bias; `w` is `[out, in / groups, kernel]`.
    pub fn conv(&mut self, params: &Params, x: NodeId, w: ParamId, stride: usize, pad: usize, groups: usize) -> NodeId {
        let xv = self.value(x);
        let wv = params.get(w);
        let geom = ConvGeometry {
            batch: xv.dim(0),
            in_channels: xv.dim(1),
            out_channels: wv.dim(0),
            in_len: xv.dim(2),
            kernel: wv.dim(2),
            stride,
            pad,
            groups,
        };
        debug_assert_eq!(wv.dim(1) * groups, geom.in_channels);
        let y = conv_forward(&geom, xv.data(), wv.data());
        let shape = vec![geom.batch, geom.out_channels, geom.out_len()];
        self.push(
            Op::Conv { x, w, geom },
            Tensor::new(shape, y).expect("conv output shape"),
        )
    }

    /// Per-channel batch normalization over `[batch, channels, length]`.
    ///
    /// Training mode normalizes with batch statistics and records a running
    /// statistics update; evaluation mode uses the stored running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        params: &Params,
        x: NodeId,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
        mode: Mode,
    ) -> NodeId {
        let xv = self.value(x);
        let (b, c, l) = (xv.dim(0), xv.dim(1), xv.dim(2));
        let n = (b * l) as f64;
        let data = xv.data();
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for bi in 0..b {
                        s += data[(bi * c + ch) * l..][..l].iter().sum::<f64>();
                    }
                    let m = s / n;
                    let mut ss = 0.0;
                    for bi in 0..b {
                        ss += data[(bi * c + ch) * l..][..l]
                            .iter()
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = ss / n;
                }
                (mean, var)
            }
            Mode::Eval => (
                params.get(running_mean).data().to_vec(),
                params.get(running_var).data().to_vec(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = params.get(gamma).data();
        let be = params.get(beta).data();
        let mut xhat = vec![0.0; data.len()];
        let mut y = vec![0.0; data.len()];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * l;
                for t in 0..l {
                    let h = (data[off + t] - mean[ch]) * inv_std[ch];
                    xhat[off + t] = h;
                    y[off + t] = g[ch] * h + be[ch];
                }
            }
        }
        if mode == Mode::Train {
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            self.bn_updates.push(BnUpdate {
                running_mean,
                running_var,
                batch_mean: mean,
                batch_var: var.iter().map(|v| v * unbias).collect(),
            });
        }
        let shape = vec![b, c, l];
        self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
            Tensor::new(shape, y).expect("bn output shape"),
        )
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let y: Vec<f64> = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let shape = xv.shape().to_vec();
        self.push(Op::Relu { x }, Tensor::new(shape, y).expect("relu shape"))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "residual shapes must agree");
        let y: Vec<f64> = av.data().iter().zip(bv.data()).map(|(p, q)| p + q).collect();
        let shape = av.shape().to_vec();
        self.push(Op::Add { a, b }, Tensor::new(shape, y).expect("add shape"))
    }

    /// `[batch, channels, length] -> [batch, channels]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (b, c, l) = (xv.dim(0), xv.dim(1), xv.dim(2));
        let y: Vec<f64> = xv
            .data()
            .chunks_exact(l)
            .map(|row| row.iter().sum::<f64>() / l as f64)
            .collect();
        self.push(Op::GlobalAvgPool { x }, Tensor::new(vec![b, c], y).expect("gap shape"))
    }

    /// `y = x w^T + b` with `w` of shape `[out, in]`.
    pub fn dense(&mut self, params: &Params, x: NodeId, w: ParamId, b: ParamId) -> NodeId {
        let xv = self.value(x);
        let wv = params.get(w);
        let bv = params.get(b).data();
        let (batch, cin) = (xv.dim(0), xv.dim(1));
        let cout = wv.dim(0);
        let mut y = vec![0.0; batch * cout];
        for i in 0..batch {
            let xrow = xv.row(i);
            for o in 0..cout {
                let wrow = &wv.data()[o * cin..(o + 1) * cin];
                y[i * cout + o] = bv[o] + xrow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        self.push(
            Op::Dense { x, w, b },
            Tensor::new(vec![batch, cout], y).expect("dense shape"),
        )
    }

    /// Row-wise softmax over `[batch, classes]`.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let c = xv.dim(1);
        let mut y = Vec::with_capacity(xv.len());
        for row in xv.data().chunks_exact(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = y.len();
            y.extend(row.iter().map(|v| (v - max).exp()));
            let sum: f64 = y[start..].iter().sum();
            y[start..].iter_mut().for_each(|v| *v /= sum);
        }
        let shape = xv.shape().to_vec();
        self.push(Op::Softmax { x }, Tensor::new(shape, y).expect("softmax shape"))
    }

    /// Back-propagates `d_output` (the gradient of the loss with respect to
    /// node `output`) and adds parameter gradients into `grads`.
    pub fn backward(&self, params: &Params, output: NodeId, d_output: &Tensor, grads: &mut Gradients) {
        self.backward_with_inputs(params, output, d_output, grads);
    }

    /// Like [`Tape::backward`], additionally returning the gradient reaching
    /// each input node.
    pub fn backward_with_inputs(
        &self,
        params: &Params,
        output: NodeId,
        d_output: &Tensor,
        grads: &mut Gradients,
    ) -> Vec<(NodeId, Tensor)> {
        let mut inputs = Vec::new();
        assert_eq!(self.value(output).shape(), d_output.shape(), "output gradient shape");
        let mut node_grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        node_grads[output.0] = Some(d_output.data().to_vec());

        fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
            slot.get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=output.0).rev() {
            let Some(dy) = node_grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {
                    let t = Tensor::new(node.value.shape().to_vec(), dy).expect("input gradient shape");
                    inputs.push((NodeId(idx), t));
                }
                Op::Conv { x, w, geom } => {
                    let xv = self.value(*x);
                    let mut dx = node_grads[x.0].take().unwrap_or_else(|| vec![0.0; xv.len()]);
                    let dw = grads.get_mut(*w).data_mut();
                    conv_backward(geom, xv.data(), params.get(*w).data(), &dy, &mut dx, dw);
                    node_grads[x.0] = Some(dx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let shape = node.value.shape();
                    let (b, c, l) = (shape[0], shape[1], shape[2]);
                    let n = (b * l) as f64;
                    let g = params.get(*gamma).data();
                    let mut sum_dy = vec![0.0; c];
                    let mut sum_dy_xhat = vec![0.0; c];
                    for bi in 0..b {
                        for ch in 0..c {
                            let off = (bi * c + ch) * l;
                            for t in 0..l {
                                sum_dy[ch] += dy[off + t];
                                sum_dy_xhat[ch] += dy[off + t] * xhat[off + t];
                            }
                        }
                    }
                    {
                        let dg = grads.get_mut(*gamma).data_mut();
                        for ch in 0..c {
                            dg[ch] += sum_dy_xhat[ch];
                        }
                    }
                    {
                        let db = grads.get_mut(*beta).data_mut();
                        for ch in 0..c {
                            db[ch] += sum_dy[ch];
                        }
                    }
                    let dx = accumulate(&mut node_grads[x.0], dy.len());
                    for bi in 0..b {
                        for ch in 0..c {
                            let off = (bi * c + ch) * l;
                            let k = g[ch] * inv_std[ch];
                            if *batch_stats {
                                let m1 = sum_dy[ch] / n;
                                let m2 = sum_dy_xhat[ch] / n;
                                for t in 0..l {
                                    dx[off + t] += k * (dy[off + t] - m1 - xhat[off + t] * m2);
                                }
                            } else {
                                for t in 0..l {
                                    dx[off + t] += k * dy[off + t];
                                }
                            }
                        }
                    }
                }
                Op::Relu { x } => {
                    let y = node.value.data();
                    let dx = accumulate(&mut node_grads[x.0], dy.len());
                    for ((d, &g), &v) in dx.iter_mut().zip(&dy).zip(y) {
                        if v > 0.0 {
                            *d += g;
                        }
                    }
                }
                Op::Add { a, b } => {
                    for target in [a, b] {
                        let d = accumulate(&mut node_grads[target.0], dy.len());
                        d.iter_mut().zip(&dy).for_each(|(d, g)| *d += g);
                    }
                }
                Op::GlobalAvgPool { x } => {
                    let xv = self.value(*x);
                    let l = xv.dim(2);
                    let dx = accumulate(&mut node_grads[x.0], xv.len());
                    for (row, &g) in dx.chunks_exact_mut(l).zip(&dy) {
                        let share = g / l as f64;
                        row.iter_mut().for_each(|d| *d += share);
                    }
                }
                Op::Dense { x, w, b } => {
                    let xv = self.value(*x);
                    let (batch, cin) = (xv.dim(0), xv.dim(1));
                    let wv = params.get(*w).data();
                    let cout = wv.len() / cin;
                    {
                        let dw = grads.get_mut(*w).data_mut();
                        for i in 0..batch {
                            let xrow = xv.row(i);
                            for o in 0..cout {
                                let g = dy[i * cout + o];
                                for (d, &xv) in dw[o * cin..(o + 1) * cin].iter_mut().zip(xrow) {
                                    *d += g * xv;
                                }
                            }
                        }
                    }
                    {
                        let db = grads.get_mut(*b).data_mut();
                        for i in 0..batch {
                            for o in 0..cout {
                                db[o] += dy[i * cout + o];
                            }
                        }
                    }
                    let dx = accumulate(&mut node_grads[x.0], xv.len());
                    for i in 0..batch {
                        for o in 0..cout {
                            let g = dy[i * cout + o];
                            for (d, &wv) in dx[i * cin..(i + 1) * cin].iter_mut().zip(&wv[o * cin..(o + 1) * cin]) {
                                *d += g * wv;
                            }
                        }
                    }
                }
                Op::Softmax { x } => {
                    let y = node.value.data();
                    let c = node.value.dim(1);
                    let dx = accumulate(&mut node_grads[x.0], dy.len());
                    for ((dxr, yr), dyr) in dx.chunks_exact_mut(c).zip(y.chunks_exact(c)).zip(dy.chunks_exact(c)) {
                        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
                        for k in 0..c {
                            dxr[k] += yr[k] * (dyr[k] - dot);
                        }
                    }
                }
            }
        }
        inputs
    }
}

/// Folds the running-statistics updates recorded on `tape` into `params`.
pub fn apply_bn_updates(params: &mut Params, tape: &Tape) {
    for u in tape.bn_updates() {
        let rm = params.get_mut(u.running_mean).data_mut();
        for (r, &m) in rm.iter_mut().zip(&u.batch_mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        let rv = params.get_mut(u.running_var).data_mut();
        for (r, &v) in rv.iter_mut().zip(&u.batch_var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
}
