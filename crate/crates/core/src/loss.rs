//! Combined Dice + cross-entropy loss.
//!
//! For probabilities `P` and one-hot targets `Y` over `I` classes and `N`
//! pixels:
//!
//! ```text
//! L = 1 - Σ_i [ λ (2 Σ_n Y P + ε) / (Σ_n Y² + Σ_n P² + ε) + (1/N) Σ_n Y log(max(P, ε_p)) ]
//! ```
//!
//! Sums over `n` run over the whole batch. With `λ = 1/I`, `P = Y` gives
//! exactly zero.

use mcfnet_tensor::{tensor, Tensor, Var};
use ndarray::{ArrayView3, Axis, IxDyn};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Dice weight; `None` means `1 / classes`.
    pub lambda: Option<f64>,
    pub smooth: f64,
    pub prob_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: None, smooth: 1e-5, prob_floor: 1e-8 }
    }
}

impl LossConfig {
    pub fn lambda_for(&self, classes: usize) -> f64 {
        self.lambda.unwrap_or(1.0 / classes as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("loss lambda must be positive, got {l}")));
            }
        }
        if !(self.smooth > 0.0) || !(self.prob_floor > 0.0) {
            return Err(Error::Config("loss smoothing constants must be positive".into()));
        }
        Ok(())
    }
}

/// `(b, h, w)` labels to a `(b, classes, h, w)` one-hot tensor.
pub fn one_hot(labels: ArrayView3<'_, u8>, classes: usize) -> Result<Tensor> {
    let (b, h, w) = labels.dim();
    let mut out = Tensor::zeros(IxDyn(&[b, classes, h, w]));
    for ((n, y, x), &l) in labels.indexed_iter() {
        if l as usize >= classes {
            return Err(Error::InvalidArgument(format!("label {l} is outside 0..{classes}")));
        }
        out[[n, l as usize, y, x]] = 1.0;
    }
    Ok(out)
}

/// Loss on probabilities `p` of shape `(b, classes, h, w)`.
pub fn dice_ce_loss<'g>(p: &Var<'g>, y: &Tensor, cfg: &LossConfig) -> Result<Var<'g>> {
    let s = p.shape();
    if s.len() != 4 || s != y.shape() {
        return Err(Error::Shape(format!("probabilities {s:?} vs target {:?}", y.shape())));
    }
    if p.value().iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("probabilities".into()));
    }
    let classes = s[1];
    let n = (s[0] * s[2] * s[3]) as f64;
    let lambda = cfg.lambda_for(classes);
    let g = p.graph();

    let yv = g.constant(y.clone());
    let ysq: Vec<f64> = (0..classes).map(|i| y.index_axis(Axis(1), i).iter().map(|v| v * v).sum()).collect();
    let ysq = g.constant(tensor(&[1, classes, 1, 1], ysq));
    let inter = p.mul(&yv).sum_axes(&[0, 2, 3]);
    let psq = p.square().sum_axes(&[0, 2, 3]);
    let dice = inter.scale(2.0).add_scalar(cfg.smooth).div(&psq.add(&ysq).add_scalar(cfg.smooth));
    let ce = p.ln_clamped(cfg.prob_floor).mul(&yv).sum().scale(1.0 / n);
    Ok(dice.sum().scale(lambda).add(&ce).neg().add_scalar(1.0))
}

/// Softmax over classes followed by [`dice_ce_loss`].
pub fn dice_ce_from_logits<'g>(logits: &Var<'g>, y: &Tensor, cfg: &LossConfig) -> Result<Var<'g>> {
    if logits.ndim() != 4 {
        return Err(Error::Shape(format!("logits must be rank 4, got {:?}", logits.shape())));
    }
    if logits.value().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    dice_ce_loss(&logits.softmax(1), y, cfg)
}
