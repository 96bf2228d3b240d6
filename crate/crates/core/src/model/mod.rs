//! Network modules.

pub mod fcb;
pub mod fusion;
pub mod heads;
pub mod mcfnet;
pub mod seb;

pub use mcfnet::{Architecture, McfNet, ModelConfig, ModelOutput};
