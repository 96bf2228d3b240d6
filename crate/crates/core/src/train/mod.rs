//! Training, evaluation and rendering.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod log;
pub mod optim;
pub mod render;
pub mod schedule;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::Config;
pub use eval::{evaluate, evaluate_model, predict};
pub use render::render_outputs;
pub use schedule::lr_schedule;
pub use trainer::{load_dataset, Trainer};
