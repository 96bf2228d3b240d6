//! Volume ingestion, slice normalization, splitting and synthetic data.

pub mod dataset;
pub mod normalize;
pub mod split;
pub mod synth;
pub mod volume;

pub use dataset::Dataset;
pub use normalize::{slice_and_normalize, NormalizationConfig, SliceSample};
pub use split::{make_split, SplitManifest};
pub use synth::synth_dataset;
pub use volume::{load_volume, merge_labels, ClassOrder, LabelVolume, Modality, Volume};
