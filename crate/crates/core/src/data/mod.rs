//! Dataset handling: on-disk layout, augmentation, synthetic shape
//! generation.

pub mod augment;
pub mod dataset;
pub mod synth;
