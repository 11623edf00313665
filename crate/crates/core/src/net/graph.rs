//! Reverse-mode autodiff tape.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. [`Graph::backward`] walks the tape in reverse
//! and accumulates gradients into every node that requires one.

use rand::Rng;

use super::kernels::{self, ConvGeom, ConvShape};
use super::tensor::{gemm, Elem, Mat, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Batch-norm statistics source.
#[derive(Debug, Clone)]
pub enum BnMode<'a> {
    /// Normalize with the batch's own statistics.
    Train,
    /// Normalize with fixed running statistics.
    Eval { mean: &'a [f32], var: &'a [f32] },
}

pub const BN_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    Conv {
        x: usize,
        w: usize,
        geom: ConvGeom,
    },
    Depthwise {
        x: usize,
        w: usize,
        geom: ConvGeom,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        invstd: Vec<f64>,
        batch_stats: bool,
    },
    Relu {
        x: usize,
        cap: f64,
    },
    Add {
        a: usize,
        b: usize,
    },
    GlobalAvgPool {
        x: usize,
    },
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    Dropout {
        x: usize,
        mask: Vec<T>,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        target: Vec<f64>,
        probs: Vec<f64>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<usize>,
}

pub struct Graph<T: Elem> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    /// Batch statistics `(mean, biased var)` of every training-mode batch norm,
    /// in call order.
    bn_stats: Vec<(Vec<f64>, Vec<f64>)>,
}

impl<T: Elem> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Elem> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            bn_stats: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// A constant input.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A trainable parameter identified by `id`.
    pub fn param(&mut self, id: usize, t: Tensor<T>) -> Var {
        let v = self.push(t, Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn bn_stats(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.bn_stats
    }

    /// Gradients of every parameter leaf, by parameter id.
    pub fn param_grads(&self) -> Vec<(usize, &Tensor<T>)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| Some((n.param?, self.grads.get(i)?.as_ref()?)))
            .collect()
    }

    fn conv_shape(&self, x: Var, cout: usize, geom: &ConvGeom) -> ConvShape {
        let (b, cin, h, w) = self.value(x).dims4();
        let (ho, wo) = geom
            .out_hw(h, w)
            .unwrap_or_else(|| panic!("window {geom:?} does not fit {h}x{w}"));
        ConvShape {
            b,
            cin,
            h,
            w,
            cout,
            ho,
            wo,
        }
    }

    /// Full convolution; `w` is `[cout, cin, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Var {
        let ws = self.value(w).shape().to_vec();
        assert_eq!(ws.len(), 4);
        assert_eq!(ws[1], self.value(x).shape()[1], "conv input channels");
        assert_eq!((ws[2], ws[3]), (geom.kh, geom.kw), "conv kernel size");
        let s = self.conv_shape(x, ws[0], &geom);
        let y = kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), &s, &geom);
        let rg = self.rg(&[x.0, w.0]);
        self.push(
            Tensor::new(vec![s.b, s.cout, s.ho, s.wo], y),
            Op::Conv {
                x: x.0,
                w: w.0,
                geom,
            },
            rg,
        )
    }

    /// Per-channel convolution; `w` is `[c, 1, kh, kw]`.
    pub fn depthwise(&mut self, x: Var, w: Var, geom: ConvGeom) -> Var {
        let ws = self.value(w).shape().to_vec();
        assert_eq!(ws.len(), 4);
        assert_eq!(ws[0], self.value(x).shape()[1], "depthwise channels");
        assert_eq!((ws[2], ws[3]), (geom.kh, geom.kw), "depthwise kernel size");
        let s = self.conv_shape(x, ws[0], &geom);
        let y = kernels::depthwise_forward(self.value(x).data(), self.value(w).data(), &s, &geom);
        let rg = self.rg(&[x.0, w.0]);
        self.push(
            Tensor::new(vec![s.b, s.cout, s.ho, s.wo], y),
            Op::Depthwise {
                x: x.0,
                w: w.0,
                geom,
            },
            rg,
        )
    }

    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, mode: BnMode<'_>) -> Var {
        let (b, c, h, w) = self.value(x).dims4();
        let hw = h * w;
        let (mean, var, batch_stats) = match mode {
            BnMode::Train => {
                let (m, v) = kernels::channel_stats(self.value(x).data(), b, c, hw);
                self.bn_stats.push((m.clone(), v.clone()));
                (m, v, true)
            }
            BnMode::Eval { mean, var } => (
                mean.iter().map(|&v| f64::from(v)).collect(),
                var.iter().map(|&v| f64::from(v)).collect(),
                false,
            ),
        };
        let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (y, xhat) = kernels::batch_norm_apply(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            &mean,
            &invstd,
            b,
            c,
            hw,
        );
        let rg = self.rg(&[x.0, gamma.0, beta.0]);
        self.push(
            Tensor::new(vec![b, c, h, w], y),
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                invstd,
                batch_stats,
            },
            rg,
        )
    }

    fn clamp_relu(&mut self, x: Var, cap: f64) -> Var {
        let cap_t = T::from_f64(cap);
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| {
                if v < T::zero() {
                    T::zero()
                } else if v > cap_t {
                    cap_t
                } else {
                    v
                }
            })
            .collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(&[x.0]);
        self.push(Tensor::new(shape, data), Op::Relu { x: x.0, cap }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.clamp_relu(x, f64::INFINITY)
    }

    pub fn relu6(&mut self, x: Var) -> Var {
        self.clamp_relu(x, 6.0)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add shapes");
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(&[a.0, b.0]);
        self.push(out, Op::Add { a: a.0, b: b.0 }, rg)
    }

    /// Mean over height and width: `[b, c, h, w] -> [b, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (b, c, h, w) = self.value(x).dims4();
        let hw = h * w;
        let data = self
            .value(x)
            .data()
            .chunks_exact(hw)
            .map(|plane| T::from_f64(plane.iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64))
            .collect();
        let rg = self.rg(&[x.0]);
        self.push(
            Tensor::new(vec![b, c], data),
            Op::GlobalAvgPool { x: x.0 },
            rg,
        )
    }

    /// `x [b, in] * w^T [in, out] + bias`; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Var {
        let (b, fin) = self.value(x).dims2();
        let (fout, win) = self.value(w).dims2();
        assert_eq!(fin, win, "linear input features");
        assert_eq!(self.value(bias).len(), fout);
        let mut y = vec![T::zero(); b * fout];
        for row in y.chunks_exact_mut(fout) {
            row.copy_from_slice(self.value(bias).data());
        }
        gemm(
            Mat::new(self.value(x).data(), b, fin),
            Mat::new(self.value(w).data(), fout, fin).t(),
            T::one(),
            &mut y,
        );
        let rg = self.rg(&[x.0, w.0, bias.0]);
        self.push(
            Tensor::new(vec![b, fout], y),
            Op::Linear {
                x: x.0,
                w: w.0,
                b: bias.0,
            },
            rg,
        )
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut impl Rng) -> Var {
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let mask = (0..self.value(x).len())
            .map(|_| {
                if rng.gen_bool(1.0 - rate) {
                    keep
                } else {
                    T::zero()
                }
            })
            .collect();
        self.dropout_with_mask(x, mask)
    }

    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<T>) -> Var {
        assert_eq!(mask.len(), self.value(x).len());
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(&[x.0]);
        self.push(Tensor::new(shape, data), Op::Dropout { x: x.0, mask }, rg)
    }

    /// Mean over rows of `-sum(target * log softmax(logits))`. Targets may be
    /// soft labels. Returns a one-element tensor.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: &[f64]) -> Var {
        let (b, c) = self.value(logits).dims2();
        assert_eq!(target.len(), b * c, "target shape");
        let probs = kernels::softmax_rows(self.value(logits).data(), b, c);
        let mut loss = 0f64;
        for (l, row) in self
            .value(logits)
            .data()
            .chunks_exact(c)
            .zip(target.chunks_exact(c))
        {
            let max = l
                .iter()
                .map(|v| v.as_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = max + l.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
            loss += row
                .iter()
                .zip(l)
                .map(|(&y, &z)| {
                    if y == 0.0 {
                        0.0
                    } else {
                        -y * (z.as_f64() - lse)
                    }
                })
                .sum::<f64>();
        }
        loss /= b as f64;
        let rg = self.rg(&[logits.0]);
        self.push(
            Tensor::new(vec![1], vec![T::from_f64(loss)]),
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                target: target.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Back-propagates from a scalar output with seed gradient 1.
    pub fn backward(&mut self, out: Var) {
        let seed = Tensor::full(self.value(out).shape(), T::one());
        self.backward_with(out, seed);
    }

    pub fn backward_with(&mut self, out: Var, seed: Tensor<T>) {
        assert_eq!(seed.shape(), self.value(out).shape());
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let contributions = self.node_backward(i, &g);
            self.grads[i] = Some(g);
            for (target, grad) in contributions {
                if !self.nodes[target].requires_grad {
                    continue;
                }
                match &mut self.grads[target] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn node_backward(&self, i: usize, g: &Tensor<T>) -> Vec<(usize, Tensor<T>)> {
        let node = &self.nodes[i];
        let shape_of = |j: usize| self.nodes[j].value.shape().to_vec();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv { x, w, geom } | Op::Depthwise { x, w, geom } => {
                let depthwise = matches!(node.op, Op::Depthwise { .. });
                let cout = self.nodes[*w].value.shape()[0];
                let s = self.conv_shape(Var(*x), cout, geom);
                let xv = self.nodes[*x].value.data();
                let wv = self.nodes[*w].value.data();
                let (dx, dw) = if depthwise {
                    kernels::depthwise_backward(xv, wv, g.data(), &s, geom, self.needs(*x))
                } else {
                    kernels::conv2d_backward(xv, wv, g.data(), &s, geom, self.needs(*x))
                };
                let mut out = vec![(*w, Tensor::new(shape_of(*w), dw))];
                if let Some(dx) = dx {
                    out.push((*x, Tensor::new(shape_of(*x), dx)));
                }
                out
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                invstd,
                batch_stats,
            } => {
                let (b, c, h, w) = node.value.dims4();
                let (dx, dg, db) = kernels::batch_norm_backward(
                    g.data(),
                    xhat,
                    self.nodes[*gamma].value.data(),
                    invstd,
                    b,
                    c,
                    h * w,
                    *batch_stats,
                );
                vec![
                    (*x, Tensor::new(shape_of(*x), dx)),
                    (*gamma, Tensor::new(shape_of(*gamma), dg)),
                    (*beta, Tensor::new(shape_of(*beta), db)),
                ]
            }
            Op::Relu { x, cap } => {
                let cap = T::from_f64(*cap);
                let data = self.nodes[*x]
                    .value
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &d)| {
                        if v > T::zero() && v < cap {
                            d
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                vec![(*x, Tensor::new(shape_of(*x), data))]
            }
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::GlobalAvgPool { x } => {
                let (_, _, h, w) = self.nodes[*x].value.dims4();
                let hw = h * w;
                let scale = T::from_f64(1.0 / hw as f64);
                let mut data = Vec::with_capacity(g.len() * hw);
                for &d in g.data() {
                    data.extend(std::iter::repeat_n(d * scale, hw));
                }
                vec![(*x, Tensor::new(shape_of(*x), data))]
            }
            Op::Linear { x, w, b } => {
                let (batch, fin) = self.nodes[*x].value.dims2();
                let fout = self.nodes[*w].value.shape()[0];
                let dy = Mat::new(g.data(), batch, fout);
                let mut dw = vec![T::zero(); fout * fin];
                gemm(
                    dy.t(),
                    Mat::new(self.nodes[*x].value.data(), batch, fin),
                    T::zero(),
                    &mut dw,
                );
                let mut db = vec![T::zero(); fout];
                for row in g.data().chunks_exact(fout) {
                    for (a, &d) in db.iter_mut().zip(row) {
                        *a += d;
                    }
                }
                let mut out = vec![
                    (*w, Tensor::new(shape_of(*w), dw)),
                    (*b, Tensor::new(shape_of(*b), db)),
                ];
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); batch * fin];
                    gemm(
                        dy,
                        Mat::new(self.nodes[*w].value.data(), fout, fin),
                        T::zero(),
                        &mut dx,
                    );
                    out.push((*x, Tensor::new(shape_of(*x), dx)));
                }
                out
            }
            Op::Dropout { x, mask } => {
                let data = g.data().iter().zip(mask).map(|(&d, &m)| d * m).collect();
                vec![(*x, Tensor::new(shape_of(*x), data))]
            }
            Op::SoftmaxCrossEntropy {
                logits,
                target,
                probs,
            } => {
                let (b, c) = self.nodes[*logits].value.dims2();
                let upstream = g.data()[0].as_f64() / b as f64;
                let data = (0..b * c)
                    .map(|k| {
                        let row_mass: f64 = target[(k / c) * c..(k / c + 1) * c].iter().sum();
                        T::from_f64(upstream * (probs[k] * row_mass - target[k]))
                    })
                    .collect();
                vec![(*logits, Tensor::new(vec![b, c], data))]
            }
        }
    }
}
