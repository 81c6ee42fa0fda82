//! Cube and label ingestion, band grouping, patch extraction, augmentation,
//! deterministic splits and synthetic scenes.

mod augment;
mod cube;
mod groups;
mod patches;
mod split;
mod stats;
mod synth;

pub use augment::{augment_training_set, fuse_virtual_sample, geometric_augment, AugmentConfig};
pub use cube::{
    decode_cube, decode_labels, encode_cube, encode_labels, read_cube, read_labels, write_cube, write_labels,
    HyperCube, LabelMap, UNLABELED,
};
pub use groups::{split_band_groups, BandGroupSet};
pub use patches::{extract_patches, patch_at, LabeledPatch};
pub use split::{sample_training_pixels, split_train_val, HasLabel};
pub use stats::BandStats;
pub use synth::{synth_scene, SynthSpec};
