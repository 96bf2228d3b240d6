//! The full network and its ablation variants.

use mcfnet_tensor::{ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::fcb::{Fcb, FcbConfig};
use crate::model::fusion::{fuse_bottleneck, fuse_skip, Cab, Lat, SkipFusion};
use crate::model::heads::{conv_head, final_pred, pairwise_aggregate, ConvHead, FinalWeights};
use crate::model::seb::{Seb, SebConfig, SebOutput};
use crate::nn::Ctx;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SebOnly,
    FcbOnly,
    Cascade,
}

impl Architecture {
    pub fn has_seb(self) -> bool {
        !matches!(self, Architecture::FcbOnly)
    }

    pub fn has_fcb(self) -> bool {
        !matches!(self, Architecture::SebOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Number of classes including background.
    pub classes: usize,
    pub seb: SebConfig,
    pub fcb: FcbConfig,
    pub attention_heads: usize,
    pub head_kernel: usize,
    /// Side length fed to FCB; SEB works at the sample resolution.
    pub fcb_input: usize,
    pub final_weights: FinalWeights,
}

impl ModelConfig {
    pub fn full(architecture: Architecture, classes: usize) -> Self {
        Self::scaled(architecture, classes, 1, 8)
    }

    /// All channel plans divided by 8.
    pub fn micro(architecture: Architecture, classes: usize) -> Self {
        Self::scaled(architecture, classes, 8, 2)
    }

    pub fn scaled(architecture: Architecture, classes: usize, divisor: usize, se_reduction: usize) -> Self {
        Self {
            architecture,
            classes,
            seb: SebConfig::scaled(divisor, se_reduction),
            fcb: FcbConfig::scaled(divisor),
            attention_heads: 4,
            head_kernel: 1,
            fcb_input: 224,
            final_weights: FinalWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.fcb_input == 0 || !self.fcb_input.is_multiple_of(16) {
            return Err(Error::NotDivisible { size: self.fcb_input, divisor: 16 });
        }
        if self.head_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("head kernel must be odd, got {}", self.head_kernel)));
        }
        if self.seb.in_channels != self.fcb.in_channels {
            return Err(Error::Config("SEB and FCB must take the same number of input channels".into()));
        }
        Ok(())
    }
}

/// Outputs of one forward pass. Prediction maps are at the input resolution.
pub struct ModelOutput<'g> {
    /// `p1..p4`, shallowest scale first.
    pub maps: Vec<Var<'g>>,
    pub pred: Var<'g>,
    pub seb: Option<SebOutput<'g>>,
    /// Image actually fed to FCB.
    pub fcb_input: Option<Var<'g>>,
    /// FCB decoder stages, deepest first.
    pub fcb_decoder: Option<Vec<Var<'g>>>,
}

#[derive(Debug, Clone)]
struct FcbPart {
    fcb: Fcb,
    lats: Vec<Lat>,
    cab: Cab,
    heads: Vec<ConvHead>,
}

#[derive(Debug, Clone)]
struct Fusion {
    skips: Vec<SkipFusion>,
    bottleneck: SkipFusion,
}

#[derive(Debug, Clone)]
pub struct McfNet {
    pub config: ModelConfig,
    seb: Option<(Seb, Vec<ConvHead>)>,
    fcb: Option<FcbPart>,
    fusion: Option<Fusion>,
}

impl McfNet {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let arch = config.architecture;
        let n = config.classes;
        let k = config.head_kernel;

        let seb = if arch.has_seb() {
            let seb = Seb::new(store, rng, &config.seb, arch == Architecture::Cascade)?;
            let heads = (0..4)
                .map(|i| ConvHead::new(store, rng, &format!("seb.head{}", i + 1), config.seb.decoder[3 - i], n, k))
                .collect();
            Some((seb, heads))
        } else {
            None
        };

        let fcb = if arch.has_fcb() {
            let fc = &config.fcb;
            let fcb = Fcb::new(store, rng, fc);
            let lats = (0..4)
                .map(|l| Lat::new(store, rng, &format!("fcb.lat{l}"), fc.encoder[l], config.attention_heads))
                .collect::<Result<Vec<_>>>()?;
            let cab = Cab::new(store, rng, "fcb.cab", fc.bottleneck, &fc.encoder, config.attention_heads)?;
            let heads = (0..4)
                .map(|i| ConvHead::new(store, rng, &format!("fcb.head{}", i + 1), fc.decoder[3 - i], n, k))
                .collect();
            Some(FcbPart { fcb, lats, cab, heads })
        } else {
            None
        };

        let fusion = (arch == Architecture::Cascade).then(|| {
            let (se, fe) = (config.seb.encoder, config.fcb.encoder);
            Fusion {
                skips: (0..4)
                    .map(|l| SkipFusion::new(store, rng, &format!("fusion.skip{l}"), l, se[l], fe[l]))
                    .collect(),
                bottleneck: SkipFusion::new(store, rng, "fusion.bottleneck", 4, se[3], config.fcb.bottleneck),
            }
        });

        Ok(Self { config: config.clone(), seb, fcb, fusion })
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    /// `image` is `(b, channels, h, w)`; every map comes back at `h`×`w`.
    pub fn forward<'g>(&self, ctx: Ctx<'g>, image: &Var<'g>) -> Result<ModelOutput<'g>> {
        let s = image.shape().to_vec();
        if s.len() != 4 {
            return Err(Error::Shape(format!("expected a (b, c, h, w) image, got {s:?}")));
        }
        let (h, w) = (s[2], s[3]);

        let seb_out = match &self.seb {
            Some((seb, _)) => Some(seb.forward(ctx, image)?),
            None => None,
        };
        let seb_preds = match (&self.seb, &seb_out) {
            (Some((_, heads)), Some(out)) => Some(
                heads
                    .iter()
                    .enumerate()
                    .map(|(i, head)| conv_head(ctx, head, &out.decoder[3 - i]))
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };

        let (mut fcb_input, mut fcb_decoder, mut fcb_preds) = (None, None, None);
        if let Some(part) = &self.fcb {
            let side = self.config.fcb_input;
            let source = match &seb_out {
                Some(out) => out.gated.clone().ok_or_else(|| Error::Shape("SEB gate missing".into()))?,
                None => image.clone(),
            };
            let x = source.resize_bilinear(side, side);
            let enc = part.fcb.encode(ctx, &x)?;
            let mut skips: Vec<Var<'g>> = part.lats.iter().zip(&enc.skips).map(|(lat, sk)| lat.forward(ctx, sk)).collect();
            let mut bridge = part.cab.forward(ctx, &enc.bottleneck, &enc.skips)?;
            if let (Some(fusion), Some(out)) = (&self.fusion, &seb_out) {
                for (l, sk) in skips.iter_mut().enumerate() {
                    *sk = fuse_skip(ctx, &fusion.skips[l], sk, &out.skips[l])?;
                }
                bridge = fuse_bottleneck(ctx, &fusion.bottleneck, &bridge, &out.skips[3])?;
            }
            let dec = part.fcb.decode(ctx, &bridge, &skips)?;
            let preds = part
                .heads
                .iter()
                .enumerate()
                .map(|(i, head)| conv_head(ctx, head, &dec[3 - i]))
                .collect::<Result<Vec<_>>>()?;
            fcb_input = Some(x);
            fcb_decoder = Some(dec);
            fcb_preds = Some(preds);
        }

        let merged: Vec<Var<'g>> = match (seb_preds, fcb_preds) {
            (Some(sp), Some(fp)) => sp.iter().zip(&fp).map(|(a, b)| pairwise_aggregate(a, b)).collect::<Result<_>>()?,
            (Some(sp), None) => sp,
            (None, Some(fp)) => fp,
            (None, None) => unreachable!("every architecture has a backbone"),
        };
        let maps: Vec<Var<'g>> = merged.iter().map(|m| m.resize_bilinear(h, w)).collect();
        let pred = final_pred(&maps, self.config.final_weights)?;
        Ok(ModelOutput { maps, pred, seb: seb_out, fcb_input, fcb_decoder })
    }

    /// Zeroes every LAT/CAB output projection and SEB-to-FCB projection
    /// weight. The cascade then behaves as plain FCB on the gated image with
    /// the projection biases added to its skips and bridge.
    pub fn zero_attention_and_projections(&self, store: &mut ParamStore) {
        if let Some(part) = &self.fcb {
            for lat in &part.lats {
                lat.zero_output(store);
            }
            part.cab.zero_output(store);
        }
        if let Some(fusion) = &self.fusion {
            for f in &fusion.skips {
                f.zero_weight(store);
            }
            fusion.bottleneck.zero_weight(store);
        }
    }

    pub fn fcb(&self) -> Option<&Fcb> {
        self.fcb.as_ref().map(|p| &p.fcb)
    }

    pub fn seb(&self) -> Option<&Seb> {
        self.seb.as_ref().map(|(s, _)| s)
    }

    /// FCB heads, `p1` first.
    pub fn fcb_heads(&self) -> &[ConvHead] {
        self.fcb.as_ref().map(|p| p.heads.as_slice()).unwrap_or(&[])
    }

    /// SEB heads, `p1` first.
    pub fn seb_heads(&self) -> &[ConvHead] {
        self.seb.as_ref().map(|(_, h)| h.as_slice()).unwrap_or(&[])
    }

    /// Skip-fusion projections followed by the bottleneck projection.
    pub fn fusions(&self) -> Vec<&SkipFusion> {
        self.fusion.as_ref().map(|f| f.skips.iter().chain([&f.bottleneck]).collect()).unwrap_or_default()
    }
}
