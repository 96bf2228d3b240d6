//! Parameterised building blocks shared by the backbones and fusion modules.

use mcfnet_tensor::{init, tensor, BatchNormStats, Graph, ParamId, ParamStore, Tensor, Var};
use ndarray::IxDyn;
use rand::Rng;

/// Graph plus the parameter store a forward pass reads from.
#[derive(Clone, Copy)]
pub struct Ctx<'g> {
    pub graph: &'g Graph,
    pub store: &'g ParamStore,
}

impl<'g> Ctx<'g> {
    pub fn new(graph: &'g Graph, store: &'g ParamStore) -> Self {
        Self { graph, store }
    }

    pub fn param(&self, id: ParamId) -> Var<'g> {
        self.graph.param(self.store, id)
    }
}

/// Square "same"-padded convolution, stride 1.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        with_bias: bool,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.trainable(
            format!("{name}.weight"),
            init::kaiming_normal(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
        );
        let bias = with_bias
            .then(|| store.trainable(format!("{name}.bias"), init::fan_in_uniform(&[out_channels], fan_in, rng)));
        Self { weight, bias, in_channels, out_channels, kernel }
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: &Var<'g>) -> Var<'g> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        x.conv2d(&w, b.as_ref())
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BatchNormStats,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let ones = Tensor::ones(IxDyn(&[channels]));
        let zeros = Tensor::zeros(IxDyn(&[channels]));
        Self {
            gamma: store.trainable(format!("{name}.gamma"), ones.clone()),
            beta: store.trainable(format!("{name}.beta"), zeros.clone()),
            stats: BatchNormStats {
                running_mean: store.buffer(format!("{name}.running_mean"), zeros),
                running_var: store.buffer(format!("{name}.running_var"), ones),
                momentum: 0.1,
                eps: 1e-5,
            },
        }
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: &Var<'g>) -> Var<'g> {
        x.batch_norm(&ctx.param(self.gamma), &ctx.param(self.beta), ctx.store, self.stats)
    }
}

/// 3×3 convolution (no bias) → batch norm → ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, in_channels: usize, out_channels: usize) -> Self {
        Self {
            conv: Conv2d::new(store, rng, &format!("{name}.conv"), in_channels, out_channels, 3, false),
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), out_channels),
        }
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: &Var<'g>) -> Var<'g> {
        self.bn.forward(ctx, &self.conv.forward(ctx, x)).relu()
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels
    }
}

/// Two stacked [`ConvBnRelu`] blocks.
#[derive(Debug, Clone)]
pub struct DoubleConv {
    pub first: ConvBnRelu,
    pub second: ConvBnRelu,
}

impl DoubleConv {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, in_channels: usize, out_channels: usize) -> Self {
        Self {
            first: ConvBnRelu::new(store, rng, &format!("{name}.0"), in_channels, out_channels),
            second: ConvBnRelu::new(store, rng, &format!("{name}.1"), out_channels, out_channels),
        }
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: &Var<'g>) -> Var<'g> {
        self.second.forward(ctx, &self.first.forward(ctx, x))
    }
}

/// Affine map over the last axis: `x · W + b` with `W` of shape `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, in_features: usize, out_features: usize) -> Self {
        Self {
            weight: store.trainable(
                format!("{name}.weight"),
                init::fan_in_uniform(&[in_features, out_features], in_features, rng),
            ),
            bias: store.trainable(format!("{name}.bias"), init::fan_in_uniform(&[out_features], in_features, rng)),
            in_features,
            out_features,
        }
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: &Var<'g>) -> Var<'g> {
        let y = x.matmul(&ctx.param(self.weight));
        let mut bshape = vec![1; y.ndim()];
        *bshape.last_mut().expect("rank >= 2") = self.out_features;
        y.add(&ctx.param(self.bias).reshape(&bshape))
    }

    /// Sets weight and bias to zero.
    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).fill(0.0);
        store.get_mut(self.bias).fill(0.0);
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.trainable(format!("{name}.gamma"), Tensor::ones(IxDyn(&[dim]))),
            beta: store.trainable(format!("{name}.beta"), Tensor::zeros(IxDyn(&[dim]))),
        }
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: &Var<'g>) -> Var<'g> {
        x.layer_norm(&ctx.param(self.gamma), &ctx.param(self.beta), 1e-5)
    }
}

/// `(b, c, h, w)` feature map → `(b, h*w, c)` token matrix.
pub fn to_tokens<'g>(x: &Var<'g>) -> Var<'g> {
    let s = x.shape().to_vec();
    x.permute(&[0, 2, 3, 1]).reshape(&[s[0], s[2] * s[3], s[1]])
}

/// Inverse of [`to_tokens`].
pub fn from_tokens<'g>(t: &Var<'g>, h: usize, w: usize) -> Var<'g> {
    let s = t.shape().to_vec();
    t.reshape(&[s[0], h, w, s[2]]).permute(&[0, 3, 1, 2])
}

/// `(b, l, c)` → `(b, heads, l, c / heads)`.
pub fn split_heads<'g>(t: &Var<'g>, heads: usize) -> Var<'g> {
    let s = t.shape().to_vec();
    t.reshape(&[s[0], s[1], heads, s[2] / heads]).permute(&[0, 2, 1, 3])
}

/// `(b, heads, l, d)` → `(b, l, heads * d)`.
pub fn merge_heads<'g>(t: &Var<'g>) -> Var<'g> {
    let s = t.shape().to_vec();
    t.permute(&[0, 2, 1, 3]).reshape(&[s[0], s[2], s[1] * s[3]])
}

/// Scalar constant of the given rank, for broadcasting.
pub fn scalar_like<'g>(graph: &'g Graph, value: f64, rank: usize) -> Var<'g> {
    graph.constant(tensor(&vec![1; rank], vec![value]))
}
