use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{BnMode, Graph, Var};
use super::kernels::ConvGeom;
use super::optim::AdamState;
use super::tensor::{Elem, Tensor};
use super::NetError;

/// Shortest time axis accepted by [`Model::forward`].
pub const MIN_FRAMES: usize = 32;

const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub width_mult: f64,
    pub dropout_rate: f64,
    pub input_mels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            width_mult: 1.0,
            dropout_rate: 0.3,
            input_mels: crate::dsp::N_MELS,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::InvalidConfig(m));
        if self.num_classes < 2 {
            return bad(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            ));
        }
        if !(self.width_mult > 0.0 && self.width_mult <= 1.0) {
            return bad(format!(
                "width_mult must lie in (0, 1], got {}",
                self.width_mult
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            ));
        }
        if self.input_mels < 16 {
            return bad(format!(
                "input_mels must be at least 16, got {}",
                self.input_mels
            ));
        }
        Ok(())
    }

    /// Channel count after width scaling, never below 8.
    pub fn channels(&self, c: usize) -> usize {
        ((c as f64 * self.width_mult).ceil() as usize).max(8)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor<f32>,
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBuffer {
    pub name: String,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ConvKind {
    Full,
    Depthwise,
}

/// Convolution, batch norm and optional ReLU6.
#[derive(Debug, Clone)]
pub(crate) struct Unit {
    pub kind: ConvKind,
    pub weight: usize,
    pub gamma: usize,
    pub beta: usize,
    pub bn: usize,
    pub geom: ConvGeom,
    pub relu6: bool,
}

#[derive(Debug, Clone)]
pub(crate) enum Block {
    Unit(Unit),
    /// Expansion, depthwise and linear projection, with an identity skip when
    /// `residual`.
    Bottleneck {
        expand: Unit,
        depthwise: Unit,
        project: Unit,
        residual: bool,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Head {
    pub fc1_w: usize,
    pub fc1_b: usize,
    pub fc2_w: usize,
    pub fc2_b: usize,
}

/// Parameter allocation with He-normal weights.
pub(crate) struct Builder<'r> {
    pub params: Vec<Param>,
    pub buffers: Vec<BnBuffer>,
    rng: &'r mut ChaCha8Rng,
}

impl<'r> Builder<'r> {
    pub fn new(rng: &'r mut ChaCha8Rng) -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
            rng,
        }
    }

    fn push(&mut self, name: String, value: Tensor<f32>) -> usize {
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    pub fn he_normal(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(self.rng) as f32).collect();
        self.push(name, Tensor::new(shape, data))
    }

    pub fn constant(&mut self, name: String, shape: Vec<usize>, v: f32) -> usize {
        self.push(name, Tensor::full(&shape, v))
    }

    pub fn unit(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kind: ConvKind,
        geom: ConvGeom,
        relu6: bool,
    ) -> Unit {
        let (wshape, fan_in) = match kind {
            ConvKind::Full => (vec![cout, cin, geom.kh, geom.kw], cin * geom.kh * geom.kw),
            ConvKind::Depthwise => {
                assert_eq!(cin, cout, "depthwise keeps channels");
                (vec![cout, 1, geom.kh, geom.kw], geom.kh * geom.kw)
            }
        };
        let weight = self.he_normal(format!("{name}.weight"), wshape, fan_in);
        let gamma = self.constant(format!("{name}.bn.gamma"), vec![cout], 1.0);
        let beta = self.constant(format!("{name}.bn.beta"), vec![cout], 0.0);
        self.buffers.push(BnBuffer {
            name: format!("{name}.bn"),
            mean: vec![0.0; cout],
            var: vec![1.0; cout],
        });
        Unit {
            kind,
            weight,
            gamma,
            beta,
            bn: self.buffers.len() - 1,
            geom,
            relu6,
        }
    }

    pub fn bottleneck(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        t: usize,
        stride: usize,
    ) -> Block {
        let hidden = cin * t;
        let expand = self.unit(
            &format!("{name}.expand"),
            cin,
            hidden,
            ConvKind::Full,
            ConvGeom::pointwise(),
            true,
        );
        let depthwise = self.unit(
            &format!("{name}.dw"),
            hidden,
            hidden,
            ConvKind::Depthwise,
            ConvGeom::square(3, stride, 1, true),
            true,
        );
        let project = self.unit(
            &format!("{name}.project"),
            hidden,
            cout,
            ConvKind::Full,
            ConvGeom::pointwise(),
            false,
        );
        Block::Bottleneck {
            expand,
            depthwise,
            project,
            residual: stride == 1 && cin == cout,
        }
    }
}

/// Per-forward state: graph handles of every parameter and the batch-norm mode.
pub(crate) struct Ctx<'a> {
    pub vars: Vec<Var>,
    pub buffers: &'a [BnBuffer],
    pub train: bool,
}

pub(crate) fn unit_forward<T: Elem>(g: &mut Graph<T>, ctx: &Ctx<'_>, u: &Unit, x: Var) -> Var {
    let w = ctx.vars[u.weight];
    let y = match u.kind {
        ConvKind::Full => g.conv2d(x, w, u.geom),
        ConvKind::Depthwise => g.depthwise(x, w, u.geom),
    };
    let mode = if ctx.train {
        BnMode::Train
    } else {
        let b = &ctx.buffers[u.bn];
        BnMode::Eval {
            mean: &b.mean,
            var: &b.var,
        }
    };
    let y = g.batch_norm(y, ctx.vars[u.gamma], ctx.vars[u.beta], mode);
    if u.relu6 {
        g.relu6(y)
    } else {
        y
    }
}

pub(crate) fn block_forward<T: Elem>(
    g: &mut Graph<T>,
    ctx: &Ctx<'_>,
    block: &Block,
    x: Var,
) -> Var {
    match block {
        Block::Unit(u) => unit_forward(g, ctx, u, x),
        Block::Bottleneck {
            expand,
            depthwise,
            project,
            residual,
        } => {
            let h = unit_forward(g, ctx, expand, x);
            let h = unit_forward(g, ctx, depthwise, h);
            let h = unit_forward(g, ctx, project, h);
            if *residual {
                g.add(x, h)
            } else {
                h
            }
        }
    }
}

/// Graph handles produced by a forward pass.
pub(crate) struct ForwardOut {
    pub logits: Var,
    pub penultimate: Var,
}

/// The classifier: stem, three bottleneck stages, global depthwise
/// embedding and a two-layer dense head.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    pub(crate) params: Vec<Param>,
    pub(crate) buffers: Vec<BnBuffer>,
    pub(crate) blocks: Vec<Block>,
    pub(crate) head: Head,
    pub(crate) adam: AdamState,
}

/// `(expansion t, channels c, repeats n, first stride s)` per bottleneck stage.
const STAGES: [(usize, usize, usize, usize); 3] = [(2, 128, 2, 2), (4, 128, 2, 2), (4, 128, 2, 2)];

pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model, NetError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::new(&mut rng);
    let mut blocks = Vec::new();

    let c_stem = cfg.channels(64);
    blocks.push(Block::Unit(b.unit(
        "conv1",
        1,
        c_stem,
        ConvKind::Full,
        ConvGeom::square(3, 2, 1, true),
        true,
    )));
    blocks.push(Block::Unit(b.unit(
        "conv2",
        c_stem,
        c_stem,
        ConvKind::Full,
        ConvGeom::square(3, 1, 1, true),
        true,
    )));
    let mut height = cfg.input_mels.div_ceil(2);
    let mut cin = c_stem;
    for (si, &(t, c, n, s)) in STAGES.iter().enumerate() {
        let cout = cfg.channels(c);
        for i in 0..n {
            let stride = if i == 0 { s } else { 1 };
            blocks.push(b.bottleneck(&format!("stage{}.{i}", si + 1), cin, cout, t, stride));
            height = height.div_ceil(stride);
            cin = cout;
        }
    }
    let c_embed = cfg.channels(512);
    blocks.push(Block::Unit(b.unit(
        "conv3",
        cin,
        c_embed,
        ConvKind::Full,
        ConvGeom::pointwise(),
        true,
    )));
    // Depthwise kernel covering the whole remaining frequency axis.
    let gd = ConvGeom {
        kh: height,
        kw: 1,
        sh: 1,
        sw: 1,
        ph: 0,
        pw: 0,
        wrap_time: false,
    };
    blocks.push(Block::Unit(b.unit(
        "gdconv",
        c_embed,
        c_embed,
        ConvKind::Depthwise,
        gd,
        false,
    )));
    blocks.push(Block::Unit(b.unit(
        "conv4",
        c_embed,
        c_embed,
        ConvKind::Full,
        ConvGeom::pointwise(),
        false,
    )));

    let hidden = cfg.channels(1024);
    let head = Head {
        fc1_w: b.he_normal("fc1.weight".into(), vec![hidden, c_embed], c_embed),
        fc1_b: b.constant("fc1.bias".into(), vec![hidden], 0.0),
        fc2_w: b.he_normal("fc2.weight".into(), vec![cfg.num_classes, hidden], hidden),
        fc2_b: b.constant("fc2.bias".into(), vec![cfg.num_classes], 0.0),
    };
    let Builder {
        params, buffers, ..
    } = b;
    let adam = AdamState::new(&params);
    Ok(Model {
        config: cfg.clone(),
        params,
        buffers,
        blocks,
        head,
        adam,
    })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[BnBuffer] {
        &self.buffers
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Output channels of the first convolution.
    pub fn stem_channels(&self) -> usize {
        self.params[0].value.shape()[0]
    }

    pub(crate) fn check_input(&self, shape: &[usize]) -> Result<(), NetError> {
        if shape.len() != 4 || shape[1] != 1 || shape[2] != self.config.input_mels {
            return Err(NetError::ShapeMismatch(format!(
                "expected [batch, 1, {}, frames], got {shape:?}",
                self.config.input_mels
            )));
        }
        if shape[0] == 0 {
            return Err(NetError::ShapeMismatch("empty batch".into()));
        }
        if shape[3] < MIN_FRAMES {
            return Err(NetError::InputTooSmall {
                min: MIN_FRAMES,
                got: shape[3],
            });
        }
        Ok(())
    }

    /// Records the network on `g`. With `trainable` the parameters receive
    /// gradients; `train` selects batch statistics and active dropout.
    pub(crate) fn forward_graph<T: Elem>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        train: bool,
        trainable: bool,
        rng: &mut impl Rng,
    ) -> Result<ForwardOut, NetError> {
        self.check_input(g.value(x).shape())?;
        let vars = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let t = p.value.cast::<T>();
                if trainable {
                    g.param(i, t)
                } else {
                    g.input(t)
                }
            })
            .collect();
        let ctx = Ctx {
            vars,
            buffers: &self.buffers,
            train,
        };
        let mut h = x;
        for block in &self.blocks {
            h = block_forward(g, &ctx, block, h);
        }
        let pooled = g.global_avg_pool(h);
        if !g.value(pooled).is_finite() {
            return Err(NetError::NonFiniteActivation("embedding pool".into()));
        }
        let hd = &self.head;
        let z = g.linear(pooled, ctx.vars[hd.fc1_w], ctx.vars[hd.fc1_b]);
        let penultimate = g.relu(z);
        let dropped = if train && self.config.dropout_rate > 0.0 {
            g.dropout(penultimate, self.config.dropout_rate, rng)
        } else {
            penultimate
        };
        let logits = g.linear(dropped, ctx.vars[hd.fc2_w], ctx.vars[hd.fc2_b]);
        if !g.value(logits).is_finite() {
            return Err(NetError::NonFiniteActivation("logits".into()));
        }
        Ok(ForwardOut {
            logits,
            penultimate,
        })
    }

    /// Softmax class probabilities `[batch, classes]` for `[batch, 1, mels, frames]` input.
    pub fn forward(
        &self,
        batch: &Tensor<f32>,
        train_mode: bool,
        rng: &mut impl Rng,
    ) -> Result<Tensor<f32>, NetError> {
        let mut g = Graph::<f32>::new();
        let x = g.input(batch.clone());
        let out = self.forward_graph(&mut g, x, train_mode, false, rng)?;
        let (b, c) = g.value(out.logits).dims2();
        let probs = super::kernels::softmax_rows(g.value(out.logits).data(), b, c);
        Ok(Tensor::new(
            vec![b, c],
            probs.into_iter().map(|p| p as f32).collect(),
        ))
    }

    /// Folds the batch statistics of a training pass into the running
    /// averages. The variance is stored unbiased.
    pub(crate) fn update_running_stats(
        &mut self,
        stats: &[(Vec<f64>, Vec<f64>)],
        n_per_channel: &[usize],
    ) {
        assert_eq!(stats.len(), self.buffers.len());
        for ((buf, (mean, var)), &n) in self.buffers.iter_mut().zip(stats).zip(n_per_channel) {
            let unbias = if n > 1 {
                n as f64 / (n - 1) as f64
            } else {
                1.0
            };
            for c in 0..buf.mean.len() {
                let m = f64::from(buf.mean[c]);
                let v = f64::from(buf.var[c]);
                buf.mean[c] = ((1.0 - BN_MOMENTUM) * m + BN_MOMENTUM * mean[c]) as f32;
                buf.var[c] = ((1.0 - BN_MOMENTUM) * v + BN_MOMENTUM * var[c] * unbias) as f32;
            }
        }
    }

    /// Elements averaged by each batch-norm layer for a batch of the given
    /// input shape, in layer order.
    pub(crate) fn bn_counts(&self, batch: usize, mut h: usize, mut w: usize) -> Vec<usize> {
        let mut counts = Vec::with_capacity(self.buffers.len());
        let mut visit = |u: &Unit, h: &mut usize, w: &mut usize| {
            let (ho, wo) = u.geom.out_hw(*h, *w).expect("checked input size");
            *h = ho;
            *w = wo;
            counts.push(batch * ho * wo);
        };
        for block in &self.blocks {
            match block {
                Block::Unit(u) => visit(u, &mut h, &mut w),
                Block::Bottleneck {
                    expand,
                    depthwise,
                    project,
                    ..
                } => {
                    visit(expand, &mut h, &mut w);
                    visit(depthwise, &mut h, &mut w);
                    visit(project, &mut h, &mut w);
                }
            }
        }
        counts
    }
}

/// Stacks equally long spectrograms into a `[batch, 1, mels, frames]` tensor.
pub fn stack_specs(specs: &[&crate::dsp::MelSpectrogram]) -> Result<Tensor<f32>, NetError> {
    let first = specs.first().ok_or(NetError::EmptyDataset)?;
    let (mels, frames) = (first.n_mels(), first.n_frames);
    let mut data = Vec::with_capacity(specs.len() * mels * frames);
    for s in specs {
        if s.n_frames != frames || s.n_mels() != mels {
            return Err(NetError::ShapeMismatch(format!(
                "spectrogram {}x{} in a batch of {mels}x{frames}",
                s.n_mels(),
                s.n_frames
            )));
        }
        data.extend_from_slice(&s.values);
    }
    Ok(Tensor::new(vec![specs.len(), 1, mels, frames], data))
}
