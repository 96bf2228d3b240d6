//! MCFNet: a cascaded dual-backbone segmentation network.
//!
//! A light SE-attention U-net (SEB) gates its own input with a sigmoid map;
//! the gated image feeds a second U-net (FCB) whose skip connections pass
//! through linear-attention blocks, a cross-attention bridge and additive
//! fusion with SEB features. Four per-scale prediction maps are supervised
//! through every non-empty subset of heads, grouped by subset size and
//! weighted adaptively between epochs.

pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod mfa;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
