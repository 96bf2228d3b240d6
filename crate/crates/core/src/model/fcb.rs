//! Flexible connection backbone: the main U-net whose skips pass through the
//! cascade fusion before reaching its decoder.

use mcfnet_tensor::{ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::seb::check_divisible;
use crate::nn::{Ctx, DoubleConv};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcbConfig {
    pub in_channels: usize,
    /// Stem followed by three pooled levels.
    pub encoder: [usize; 4],
    pub bottleneck: usize,
    /// Decoder stage outputs, deepest first.
    pub decoder: [usize; 4],
}

impl Default for FcbConfig {
    fn default() -> Self {
        Self { in_channels: 1, encoder: [64, 128, 256, 512], bottleneck: 512, decoder: [256, 128, 64, 64] }
    }
}

impl FcbConfig {
    pub fn scaled(divisor: usize) -> Self {
        let d = Self::default();
        Self {
            in_channels: d.in_channels,
            encoder: d.encoder.map(|c| (c / divisor).max(1)),
            bottleneck: (d.bottleneck / divisor).max(1),
            decoder: d.decoder.map(|c| (c / divisor).max(1)),
        }
    }
}

pub struct FcbEncodeOutput<'g> {
    /// Full, 1/2, 1/4 and 1/8 resolution.
    pub skips: Vec<Var<'g>>,
    /// 1/16 resolution.
    pub bottleneck: Var<'g>,
}

#[derive(Debug, Clone)]
pub struct Fcb {
    pub config: FcbConfig,
    stem: DoubleConv,
    levels: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    decoder: Vec<DoubleConv>,
}

impl Fcb {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, config: &FcbConfig) -> Self {
        let e = config.encoder;
        let stem = DoubleConv::new(store, rng, "fcb.stem", config.in_channels, e[0]);
        let levels = (0..3)
            .map(|l| DoubleConv::new(store, rng, &format!("fcb.enc{}", l + 1), e[l], e[l + 1]))
            .collect();
        let bottleneck = DoubleConv::new(store, rng, "fcb.bottleneck", e[3], config.bottleneck);
        let mut decoder = Vec::with_capacity(4);
        let mut prev = config.bottleneck;
        for (k, &out) in config.decoder.iter().enumerate() {
            decoder.push(DoubleConv::new(store, rng, &format!("fcb.dec{}", k + 1), prev + e[3 - k], out));
            prev = out;
        }
        Self { config: config.clone(), stem, levels, bottleneck, decoder }
    }

    pub fn encode<'g>(&self, ctx: Ctx<'g>, image: &Var<'g>) -> Result<FcbEncodeOutput<'g>> {
        let s = image.shape();
        if s.len() != 4 || s[1] != self.config.in_channels {
            return Err(Error::Shape(format!("FCB expects (b, {}, h, w), got {s:?}", self.config.in_channels)));
        }
        check_divisible(s, 16)?;
        let mut skips = vec![self.stem.forward(ctx, image)];
        for level in &self.levels {
            let x = level.forward(ctx, &skips.last().expect("stem").max_pool2());
            skips.push(x);
        }
        let bottleneck = self.bottleneck.forward(ctx, &skips[3].max_pool2());
        Ok(FcbEncodeOutput { skips, bottleneck })
    }

    /// Decoder stages deepest first. `skips` are ordered shallowest first.
    pub fn decode<'g>(&self, ctx: Ctx<'g>, bridge: &Var<'g>, skips: &[Var<'g>]) -> Result<Vec<Var<'g>>> {
        if skips.len() != 4 {
            return Err(Error::Shape(format!("FCB decoder needs 4 skips, got {}", skips.len())));
        }
        let e = self.config.encoder;
        let bs = bridge.shape();
        if bs.len() != 4 || bs[1] != self.config.bottleneck {
            return Err(Error::Shape(format!("bridge shape {bs:?} does not match bottleneck channels")));
        }
        let mut x = bridge.clone();
        let mut out = Vec::with_capacity(4);
        for (k, block) in self.decoder.iter().enumerate() {
            let skip = &skips[3 - k];
            let (xs, ss) = (x.shape(), skip.shape());
            let expect = [xs[0], e[3 - k], xs[2] * 2, xs[3] * 2];
            if ss != expect {
                return Err(Error::Shape(format!("skip {} has shape {ss:?}, decoder stage expects {expect:?}", 3 - k)));
            }
            let up = x.resize_bilinear(ss[2], ss[3]);
            x = block.forward(ctx, &Var::concat(&[up, skip.clone()], 1));
            out.push(x.clone());
        }
        Ok(out)
    }
}
