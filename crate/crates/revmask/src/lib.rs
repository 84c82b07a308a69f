pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod image;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod resample;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use features::{extract_features, ExtractorTopology, ExtractorWeights, FeatureExtractor, FeatureExtractorSpec};
pub use image::{Image, ValueRange};
pub use losses::{generator_loss, perceptual_loss, reverse_mask_loss, wasserstein_loss, GeneratorLossParts, LossWeights};
pub use mask::{apply_mask, composite, masked_prediction, BinaryMask, HoleRatioBucket};
pub use model::{build_critic, build_generator, clip_critic_params, critic_forward, generator_forward, Critic, CriticSpec, Generator, GeneratorSpec, GradSet, NamedTensor, ParameterSet};
pub use synth::{binarize_and_resize, sample_mask_in_bucket, synthesize_stroke_mask, MaskMode, MaskSource, MaskSourceConfig, StrokeSpec};
