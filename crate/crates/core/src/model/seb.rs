//! Sharp extraction backbone: a light SE-attention U-net that also produces
//! the sigmoid gate applied to its own input image.

use mcfnet_tensor::{ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Conv2d, ConvBnRelu, Ctx, DoubleConv, Linear};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SebConfig {
    pub in_channels: usize,
    /// Stem followed by the four encoder levels.
    pub encoder: [usize; 5],
    /// Decoder stage outputs, deepest first.
    pub decoder: [usize; 4],
    pub se_reduction: usize,
}

impl Default for SebConfig {
    fn default() -> Self {
        Self { in_channels: 1, encoder: [16, 32, 64, 128, 256], decoder: [256, 128, 64, 64], se_reduction: 8 }
    }
}

impl SebConfig {
    /// Every channel count divided by `divisor`.
    pub fn scaled(divisor: usize, se_reduction: usize) -> Self {
        let d = Self::default();
        Self {
            in_channels: d.in_channels,
            encoder: d.encoder.map(|c| (c / divisor).max(1)),
            decoder: d.decoder.map(|c| (c / divisor).max(1)),
            se_reduction,
        }
    }
}

/// Squeeze-and-excitation channel gate.
#[derive(Debug, Clone)]
pub struct SeBlock {
    pub squeeze: Linear,
    pub excite: Linear,
    pub channels: usize,
}

impl SeBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels < reduction || !channels.is_multiple_of(reduction) {
            return Err(Error::InvalidArgument(format!(
                "SE block: {channels} channels cannot be reduced by a factor of {reduction}"
            )));
        }
        let hidden = channels / reduction;
        Ok(Self {
            squeeze: Linear::new(store, rng, &format!("{name}.squeeze"), channels, hidden),
            excite: Linear::new(store, rng, &format!("{name}.excite"), hidden, channels),
            channels,
        })
    }

    /// Per-channel gate in (0, 1), shape `(b, c, 1, 1)`.
    pub fn gate<'g>(&self, ctx: Ctx<'g>, x: &Var<'g>) -> Var<'g> {
        let b = x.shape()[0];
        let pooled = x.mean_axes(&[2, 3]).reshape(&[b, self.channels]);
        let h = self.squeeze.forward(ctx, &pooled).relu();
        self.excite.forward(ctx, &h).sigmoid().reshape(&[b, self.channels, 1, 1])
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: &Var<'g>) -> Var<'g> {
        x.mul(&self.gate(ctx, x))
    }
}

/// Sigmoid activation map: `Z = σ(w * X + b)` with a 1×1 convolution.
#[derive(Debug, Clone)]
pub struct Sam {
    pub conv: Conv2d,
}

impl Sam {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, in_channels: usize) -> Self {
        Self { conv: Conv2d::new(store, rng, name, in_channels, 1, 1, true) }
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, top: &Var<'g>) -> Var<'g> {
        sam_apply(ctx, &self.conv, top)
    }
}

/// Gate map from the top decoder output; always single-channel.
pub fn sam_apply<'g>(ctx: Ctx<'g>, conv: &Conv2d, top: &Var<'g>) -> Var<'g> {
    debug_assert_eq!(conv.out_channels, 1);
    conv.forward(ctx, top).sigmoid()
}

/// Hadamard product of the input image with a single-channel gate.
pub fn gate_input<'g>(image: &Var<'g>, z: &Var<'g>) -> Result<Var<'g>> {
    let (si, sz) = (image.shape(), z.shape());
    if si.len() != 4 || sz.len() != 4 || si[0] != sz[0] || si[2..] != sz[2..] || sz[1] != 1 {
        return Err(Error::Shape(format!("gate {sz:?} does not align with image {si:?}")));
    }
    Ok(image.mul(z))
}

/// Bilinear resize of a rank-4 map to `(h, w)`.
pub fn bilinear_resize<'g>(x: &Var<'g>, h: usize, w: usize) -> Result<Var<'g>> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("resize target {h}x{w} is empty")));
    }
    if x.ndim() != 4 {
        return Err(Error::Shape(format!("resize expects a rank-4 map, got {:?}", x.shape())));
    }
    Ok(x.resize_bilinear(h, w))
}

pub(crate) fn check_divisible(shape: &[usize], divisor: usize) -> Result<()> {
    for &s in &shape[2..] {
        if s == 0 || s % divisor != 0 {
            return Err(Error::NotDivisible { size: s, divisor });
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct EncoderLevel {
    convs: DoubleConv,
    se: SeBlock,
}

#[derive(Debug, Clone)]
pub struct Seb {
    pub config: SebConfig,
    stem: ConvBnRelu,
    levels: Vec<EncoderLevel>,
    decoder: Vec<DoubleConv>,
    /// Single-channel top prediction; only built for the cascade.
    pub s_output: Option<Conv2d>,
    pub sam: Option<Sam>,
}

/// Everything the SEB forward pass exposes.
pub struct SebOutput<'g> {
    /// Stem, level 1, level 2, level 3 (full, 1/2, 1/4, 1/8 resolution).
    pub skips: Vec<Var<'g>>,
    /// Level-4 features at 1/16 resolution.
    pub bottom: Var<'g>,
    /// Decoder stages, deepest first.
    pub decoder: Vec<Var<'g>>,
    pub s_output: Option<Var<'g>>,
    pub gate: Option<Var<'g>>,
    pub gated: Option<Var<'g>>,
}

impl Seb {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, config: &SebConfig, with_gate: bool) -> Result<Self> {
        let e = config.encoder;
        let stem = ConvBnRelu::new(store, rng, "seb.stem", config.in_channels, e[0]);
        let mut levels = Vec::with_capacity(4);
        for l in 0..4 {
            levels.push(EncoderLevel {
                convs: DoubleConv::new(store, rng, &format!("seb.enc{}", l + 1), e[l], e[l + 1]),
                se: SeBlock::new(store, rng, &format!("seb.enc{}.se", l + 1), e[l + 1], config.se_reduction)?,
            });
        }
        let mut decoder = Vec::with_capacity(4);
        let mut prev = e[4];
        for (k, &out) in config.decoder.iter().enumerate() {
            let skip = e[3 - k];
            decoder.push(DoubleConv::new(store, rng, &format!("seb.dec{}", k + 1), prev + skip, out));
            prev = out;
        }
        let (s_output, sam) = if with_gate {
            (
                Some(Conv2d::new(store, rng, "seb.s_output", prev, 1, 1, true)),
                Some(Sam::new(store, rng, "seb.sam", 1)),
            )
        } else {
            (None, None)
        };
        Ok(Self { config: config.clone(), stem, levels, decoder, s_output, sam })
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, image: &Var<'g>) -> Result<SebOutput<'g>> {
        let s = image.shape();
        if s.len() != 4 || s[1] != self.config.in_channels {
            return Err(Error::Shape(format!(
                "SEB expects (b, {}, h, w), got {s:?}",
                self.config.in_channels
            )));
        }
        check_divisible(s, 16)?;

        let mut skips = vec![self.stem.forward(ctx, image)];
        let mut x = skips[0].clone();
        for (l, level) in self.levels.iter().enumerate() {
            x = level.se.forward(ctx, &level.convs.forward(ctx, &x.max_pool2()));
            if l < 3 {
                skips.push(x.clone());
            }
        }
        let bottom = x.clone();

        let mut decoder = Vec::with_capacity(4);
        for (k, block) in self.decoder.iter().enumerate() {
            let skip = &skips[3 - k];
            let up = x.resize_bilinear(skip.shape()[2], skip.shape()[3]);
            x = block.forward(ctx, &Var::concat(&[up, skip.clone()], 1));
            decoder.push(x.clone());
        }

        let (mut s_out, mut gate, mut gated) = (None, None, None);
        if let (Some(head), Some(sam)) = (&self.s_output, &self.sam) {
            let so = head.forward(ctx, &x);
            let z = sam.forward(ctx, &so);
            gated = Some(gate_input(image, &z)?);
            gate = Some(z);
            s_out = Some(so);
        }
        Ok(SebOutput { skips, bottom, decoder, s_output: s_out, gate, gated })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcfnet_tensor::{tensor, Graph, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn se_gate_matches_hand_recomputation() {
        let mut store = ParamStore::new();
        let se = SeBlock::new(&mut store, &mut rng(), "se", 8, 4).unwrap();
        let x = mcfnet_tensor::init::normal(&[1, 8, 3, 3], 1.0, &mut rng());
        let g = Graph::inference();
        let ctx = Ctx::new(&g, &store);
        let gate = se.gate(ctx, &g.constant(x.clone())).to_tensor();

        let w1 = store.get(se.squeeze.weight);
        let b1 = store.get(se.squeeze.bias);
        let w2 = store.get(se.excite.weight);
        let b2 = store.get(se.excite.bias);
        let pooled: Vec<f64> = (0..8).map(|c| x.slice(ndarray::s![0, c, .., ..]).mean().unwrap()).collect();
        let hidden: Vec<f64> = (0..2)
            .map(|j| (b1[j] + (0..8).map(|c| pooled[c] * w1[[c, j]]).sum::<f64>()).max(0.0))
            .collect();
        for c in 0..8 {
            let a = b2[c] + (0..2).map(|j| hidden[j] * w2[[j, c]]).sum::<f64>();
            let expect = 1.0 / (1.0 + (-a).exp());
            assert!((gate[[0, c, 0, 0]] - expect).abs() < 1e-12);
            assert!(expect > 0.0 && expect < 1.0);
        }
    }

    #[test]
    fn se_saturated_gate_is_identity_and_zero_stays_zero() {
        let mut store = ParamStore::new();
        let se = SeBlock::new(&mut store, &mut rng(), "se", 4, 2).unwrap();
        se.excite.zero(&mut store);
        store.get_mut(se.excite.bias).fill(40.0);
        let x = mcfnet_tensor::init::normal(&[2, 4, 4, 4], 1.0, &mut rng());
        let g = Graph::inference();
        let ctx = Ctx::new(&g, &store);
        let y = se.forward(ctx, &g.constant(x.clone())).to_tensor();
        assert!((&y - &x).iter().all(|d| d.abs() < 1e-12));
        let z = se.forward(ctx, &g.constant(Tensor::zeros(x.raw_dim()))).to_tensor();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn se_rejects_too_few_channels() {
        let mut store = ParamStore::new();
        assert!(SeBlock::new(&mut store, &mut rng(), "se", 4, 8).is_err());
    }

    #[test]
    fn sam_zero_params_give_half_and_hand_values_match() {
        let mut store = ParamStore::new();
        let sam = Sam::new(&mut store, &mut rng(), "sam", 1);
        let g = Graph::inference();
        let x = tensor(&[1, 1, 2, 2], vec![-1.0, 0.5, 2.0, 3.0]);
        store.get_mut(sam.conv.weight).fill(0.0);
        store.get_mut(sam.conv.bias.unwrap()).fill(0.0);
        let z = sam.forward(Ctx::new(&g, &store), &g.constant(x.clone())).to_tensor();
        assert!(z.iter().all(|&v| v == 0.5));

        store.get_mut(sam.conv.weight).fill(0.7);
        store.get_mut(sam.conv.bias.unwrap()).fill(-0.2);
        let z = sam.forward(Ctx::new(&g, &store), &g.constant(x.clone())).to_tensor();
        for (zv, xv) in z.iter().zip(x.iter()) {
            assert!((zv - 1.0 / (1.0 + (-(0.7 * xv - 0.2)).exp())).abs() < 1e-6);
        }
    }

    #[test]
    fn gating_is_elementwise() {
        let g = Graph::inference();
        let img = g.constant(tensor(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let z = g.constant(tensor(&[1, 1, 2, 2], vec![0.5; 4]));
        let o = gate_input(&img, &z).unwrap().to_tensor();
        assert_eq!(o.iter().copied().collect::<Vec<_>>(), vec![0.5, 1.0, 1.5, 2.0]);
        let bad = g.constant(tensor(&[1, 1, 1, 2], vec![0.5; 2]));
        assert!(gate_input(&img, &bad).is_err());
    }

    #[test]
    fn bilinear_center_of_two_by_two() {
        let g = Graph::inference();
        let x = g.constant(tensor(&[1, 1, 2, 2], vec![0.0, 2.0, 4.0, 6.0]));
        let y = bilinear_resize(&x, 1, 1).unwrap().to_tensor();
        assert!((y[[0, 0, 0, 0]] - 3.0).abs() < 1e-12);
        assert!(bilinear_resize(&x, 0, 3).is_err());
    }

    #[test]
    fn shape_trace_and_divisibility() {
        let mut store = ParamStore::new();
        let seb = Seb::new(&mut store, &mut rng(), &SebConfig::scaled(8, 2), true).unwrap();
        let g = Graph::inference();
        let ctx = Ctx::new(&g, &store);
        let out = seb.forward(ctx, &g.constant(Tensor::zeros(ndarray::IxDyn(&[2, 1, 32, 32])))).unwrap();
        let shapes: Vec<Vec<usize>> = out.skips.iter().map(|s| s.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![2, 2, 32, 32], vec![2, 4, 16, 16], vec![2, 8, 8, 8], vec![2, 16, 4, 4]]);
        assert_eq!(out.bottom.shape(), [2, 32, 2, 2]);
        let dec: Vec<Vec<usize>> = out.decoder.iter().map(|s| s.shape().to_vec()).collect();
        assert_eq!(dec, vec![vec![2, 32, 4, 4], vec![2, 16, 8, 8], vec![2, 8, 16, 16], vec![2, 8, 32, 32]]);
        assert_eq!(out.s_output.unwrap().shape(), [2, 1, 32, 32]);
        assert_eq!(out.gated.unwrap().shape(), [2, 1, 32, 32]);

        let bad = g.constant(Tensor::zeros(ndarray::IxDyn(&[1, 1, 40, 40])));
        assert!(matches!(seb.forward(ctx, &bad), Err(Error::NotDivisible { size: 40, divisor: 16 })));
    }
}
