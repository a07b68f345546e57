//! Ground-truth construction: distance transforms, skeletons, scale
//! quantization, augmentation and synthetic data.

pub mod augment;
pub mod distance;
pub mod quantize;
pub mod skeleton;
pub mod synth;

pub use augment::{augment, augment_pair, AugmentationSpec, Flip, Rotation, Transform};
pub use distance::{distance_transform, feature_transform, FeatureTransform};
pub use quantize::{
    max_regression_target, quantize_map, quantize_scale, stage_targets, OverflowPolicy,
    QuantizedScaleMap, StageTargets, TrainingTargets, DEFAULT_RHO,
};
pub use skeleton::{skeletonize, skeletonize_with, SkeletonParams};
pub use synth::{generate_sample, generate_synthetic, ShapeMix, SynthConfig, SyntheticSample};
