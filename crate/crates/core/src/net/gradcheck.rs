//! Finite-difference verification of the backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{BnMode, Graph, Var};
use super::kernels::ConvGeom;
use super::model::{block_forward, Builder, Ctx};
use super::tensor::Tensor;

const STEP: f64 = 1e-6;
/// Gradient entries smaller than this are compared absolutely.
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// 3x3 convolution, stride 1, circular time padding.
    Conv3x3,
    /// 3x3 convolution, stride 2.
    Conv3x3Strided,
    /// 1x1 convolution.
    Pointwise,
    /// 3x3 depthwise convolution.
    Depthwise,
    /// 3x3 depthwise convolution, stride 2.
    DepthwiseStrided,
    /// Depthwise convolution spanning the whole frequency axis.
    GlobalDepthwise,
    /// Batch norm with batch statistics.
    BatchNorm,
    /// Batch norm with fixed running statistics.
    BatchNormEval,
    Relu6,
    /// Inverted residual block with identity skip.
    Bottleneck,
    /// Inverted residual block with stride 2 and a channel change.
    BottleneckStrided,
    GlobalAvgPool,
    /// Fully connected layer; `shape` is `[inputs, outputs]`.
    Dense,
    Dropout,
    /// Fused softmax and cross-entropy; `shape` is `[batch, classes]`.
    SoftmaxCrossEntropy,
}

impl LayerKind {
    pub const ALL: [LayerKind; 15] = [
        LayerKind::Conv3x3,
        LayerKind::Conv3x3Strided,
        LayerKind::Pointwise,
        LayerKind::Depthwise,
        LayerKind::DepthwiseStrided,
        LayerKind::GlobalDepthwise,
        LayerKind::BatchNorm,
        LayerKind::BatchNormEval,
        LayerKind::Relu6,
        LayerKind::Bottleneck,
        LayerKind::BottleneckStrided,
        LayerKind::GlobalAvgPool,
        LayerKind::Dense,
        LayerKind::Dropout,
        LayerKind::SoftmaxCrossEntropy,
    ];

    /// A small shape suitable for [`gradient_check`].
    pub fn default_shape(self) -> Vec<usize> {
        match self {
            LayerKind::Dense => vec![8, 4],
            LayerKind::SoftmaxCrossEntropy => vec![3, 5],
            LayerKind::Bottleneck | LayerKind::BottleneckStrided => vec![2, 4, 6, 5],
            _ => vec![2, 3, 6, 5],
        }
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
}

/// Uniform values kept at least `gap` away from every point in `kinks`.
fn random_avoiding(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    lo: f64,
    hi: f64,
    kinks: &[f64],
    gap: f64,
) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.gen_range(lo..hi);
            if kinks.iter().all(|k| (v - k).abs() > gap) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>;

fn case(kind: LayerKind, shape: &[usize], rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Build) {
    use LayerKind::*;
    let spatial = || {
        assert_eq!(shape.len(), 4, "{kind:?} takes an NCHW shape");
        (shape[0], shape[1], shape[2], shape[3])
    };
    match kind {
        Conv3x3 | Conv3x3Strided | Pointwise => {
            let (_, c, _, _) = spatial();
            let geom = match kind {
                Conv3x3 => ConvGeom::square(3, 1, 1, true),
                Conv3x3Strided => ConvGeom::square(3, 2, 1, true),
                _ => ConvGeom::pointwise(),
            };
            let x = random(rng, shape, 1.0);
            let w = random(rng, &[c + 1, c, geom.kh, geom.kw], 0.5);
            (vec![x, w], Box::new(move |g, v| g.conv2d(v[0], v[1], geom)))
        }
        Depthwise | DepthwiseStrided | GlobalDepthwise => {
            let (_, c, h, _) = spatial();
            let geom = match kind {
                Depthwise => ConvGeom::square(3, 1, 1, true),
                DepthwiseStrided => ConvGeom::square(3, 2, 1, true),
                _ => ConvGeom {
                    kh: h,
                    kw: 1,
                    sh: 1,
                    sw: 1,
                    ph: 0,
                    pw: 0,
                    wrap_time: false,
                },
            };
            let x = random(rng, shape, 1.0);
            let w = random(rng, &[c, 1, geom.kh, geom.kw], 0.5);
            (
                vec![x, w],
                Box::new(move |g, v| g.depthwise(v[0], v[1], geom)),
            )
        }
        BatchNorm | BatchNormEval => {
            let (_, c, _, _) = spatial();
            let x = random(rng, shape, 2.0);
            let gamma = random_avoiding(rng, &[c], 0.5, 1.5, &[], 0.0);
            let beta = random(rng, &[c], 0.5);
            let mean: Vec<f32> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let var: Vec<f32> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
            let train = kind == BatchNorm;
            (
                vec![x, gamma, beta],
                Box::new(move |g, v| {
                    let mode = if train {
                        BnMode::Train
                    } else {
                        BnMode::Eval {
                            mean: &mean,
                            var: &var,
                        }
                    };
                    g.batch_norm(v[0], v[1], v[2], mode)
                }),
            )
        }
        Relu6 => {
            let x = random_avoiding(rng, shape, -3.0, 9.0, &[0.0, 6.0], 1e-2);
            (vec![x], Box::new(|g, v| g.relu6(v[0])))
        }
        Bottleneck | BottleneckStrided => {
            let (_, c, _, _) = spatial();
            let mut init = ChaCha8Rng::seed_from_u64(rng.gen());
            let mut b = Builder::new(&mut init);
            let block = if kind == Bottleneck {
                b.bottleneck("b", c, c, 2, 1)
            } else {
                b.bottleneck("b", c, c + 2, 2, 2)
            };
            let mut leaves = vec![random(rng, shape, 1.0)];
            leaves.extend(b.params.iter().map(|p| {
                // Perturb batch-norm affine terms away from their identity init.
                let mut t: Tensor<f64> = p.value.cast();
                if p.name.ends_with("gamma") || p.name.ends_with("beta") {
                    for v in t.data_mut() {
                        *v += rng.gen_range(-0.3..0.3);
                    }
                }
                t
            }));
            let buffers = b.buffers;
            (
                leaves,
                Box::new(move |g, v| {
                    let ctx = Ctx {
                        vars: v[1..].to_vec(),
                        buffers: &buffers,
                        train: true,
                    };
                    block_forward(g, &ctx, &block, v[0])
                }),
            )
        }
        GlobalAvgPool => (
            vec![random(rng, shape, 1.0)],
            Box::new(|g, v| g.global_avg_pool(v[0])),
        ),
        Dense => {
            assert_eq!(shape.len(), 2, "Dense takes [inputs, outputs]");
            let (fin, fout) = (shape[0], shape[1]);
            let x = random(rng, &[3, fin], 1.0);
            let w = random(rng, &[fout, fin], 0.5);
            let b = random(rng, &[fout], 0.5);
            (vec![x, w, b], Box::new(|g, v| g.linear(v[0], v[1], v[2])))
        }
        Dropout => {
            let x = random(rng, shape, 1.0);
            let mask: Vec<f64> = (0..x.len())
                .map(|_| if rng.gen_bool(0.7) { 1.0 / 0.7 } else { 0.0 })
                .collect();
            (
                vec![x],
                Box::new(move |g, v| g.dropout_with_mask(v[0], mask.clone())),
            )
        }
        SoftmaxCrossEntropy => {
            assert_eq!(shape.len(), 2, "SoftmaxCrossEntropy takes [batch, classes]");
            let (b, c) = (shape[0], shape[1]);
            let logits = random(rng, shape, 3.0);
            // Soft labels, as produced by mixup.
            let mut target = vec![0.0; b * c];
            for row in target.chunks_mut(c) {
                let (i, j) = (rng.gen_range(0..c), rng.gen_range(0..c));
                let l: f64 = rng.gen();
                row[i] += l;
                row[j] += 1.0 - l;
            }
            (
                vec![logits],
                Box::new(move |g, v| g.softmax_cross_entropy(v[0], &target)),
            )
        }
    }
}

/// Largest relative difference between analytic gradients and central
/// finite differences (step 1e-6, 64-bit) over every input and parameter of
/// one layer. The layer output is reduced with fixed random weights.
pub fn gradient_check(kind: LayerKind, shape: &[usize], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (leaves, build) = case(kind, shape, &mut rng);

    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars);
    let out_shape = g.value(out).shape().to_vec();
    let weights = random(&mut rng, &out_shape, 1.0);
    g.backward_with(out, weights.clone());
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(&leaves)
        .map(|(&v, t)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let objective = |leaves: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = leaves.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum()
    };

    let mut worst = 0f64;
    let mut probe = leaves.clone();
    for (li, grad) in analytic.iter().enumerate() {
        for i in 0..probe[li].len() {
            let orig = probe[li].data()[i];
            probe[li].data_mut()[i] = orig + STEP;
            let up = objective(&probe);
            probe[li].data_mut()[i] = orig - STEP;
            let down = objective(&probe);
            probe[li].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}
