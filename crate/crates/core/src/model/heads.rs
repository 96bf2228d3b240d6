//! Per-scale prediction heads and the weighted final prediction.

use mcfnet_tensor::{ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{scalar_like, Conv2d, Ctx};
use crate::{Error, Result};

/// Convolution from decoder features to class logits.
#[derive(Debug, Clone)]
pub struct ConvHead {
    pub conv: Conv2d,
}

impl ConvHead {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, in_channels: usize, classes: usize, kernel: usize) -> Self {
        Self { conv: Conv2d::new(store, rng, name, in_channels, classes, kernel, true) }
    }

    pub fn in_channels(&self) -> usize {
        self.conv.in_channels
    }
}

pub fn conv_head<'g>(ctx: Ctx<'g>, head: &ConvHead, features: &Var<'g>) -> Result<Var<'g>> {
    let s = features.shape();
    if s.len() != 4 || s[1] != head.in_channels() {
        return Err(Error::Shape(format!("head expects {} input channels, got {s:?}", head.in_channels())));
    }
    Ok(head.conv.forward(ctx, features))
}

/// `resize(seb_pred) + fcb_pred` at the FCB map's resolution.
pub fn pairwise_aggregate<'g>(seb_pred: &Var<'g>, fcb_pred: &Var<'g>) -> Result<Var<'g>> {
    let (s, f) = (seb_pred.shape(), fcb_pred.shape());
    if s.len() != 4 || f.len() != 4 || s[0] != f[0] || s[1] != f[1] {
        return Err(Error::Shape(format!("cannot aggregate SEB map {s:?} with FCB map {f:?}")));
    }
    Ok(seb_pred.resize_bilinear(f[2], f[3]).add(fcb_pred))
}

/// Coefficients `u, v, w, x` of the final prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalWeights(pub [f64; 4]);

impl Default for FinalWeights {
    fn default() -> Self {
        Self([1.0; 4])
    }
}

/// `u·p1 + v·p2 + w·p3 + x·p4`.
pub fn final_pred<'g>(maps: &[Var<'g>], weights: FinalWeights) -> Result<Var<'g>> {
    if maps.len() != 4 {
        return Err(Error::Shape(format!("final prediction needs 4 maps, got {}", maps.len())));
    }
    if weights.0.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite(format!("final weights {:?}", weights.0)));
    }
    let shape = maps[0].shape();
    if let Some(m) = maps.iter().find(|m| m.shape() != shape) {
        return Err(Error::Shape(format!("prediction maps differ in shape: {shape:?} vs {:?}", m.shape())));
    }
    let mut acc: Option<Var<'g>> = None;
    for (m, &w) in maps.iter().zip(&weights.0) {
        let term = if w == 1.0 { m.clone() } else { m.mul(&scalar_like(m.graph(), w, m.ndim())) };
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term),
        });
    }
    Ok(acc.expect("four maps"))
}
