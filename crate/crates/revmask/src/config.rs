//! Run configuration: flat structured text with one section per module.
//!
//! Unknown keys are hard errors, and validation enumerates every problem
//! before any compute or output-directory work starts. The file is copied
//! verbatim into the output directory at run start.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ExtractorTopology, ExtractorWeights, FeatureExtractorSpec};
use crate::mask::HoleRatioBucket;
use crate::metrics::{EmbedderSource, EmbeddingExtractorSpec};
use crate::model::{CriticSpec, GeneratorSpec};
use crate::synth::{MaskMode, MaskSourceConfig, StrokeSpec};
use crate::train::TrainConfig;

/// Environment variable overriding where external extractor/embedder
/// checkpoints are resolved from (relative paths only).
pub const CHECKPOINT_CACHE_ENV: &str = "REVMASK_CKPT_CACHE";

fn default_train_fraction() -> f64 {
    0.9
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub image_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub root: PathBuf,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub train_manifest: Option<PathBuf>,
    #[serde(default)]
    pub test_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MaskSection {
    /// "synthesize" or "load_directory".
    pub mode: String,
    #[serde(default)]
    pub directory: Option<PathBuf>,
    #[serde(default = "defaults::num_strokes")]
    pub num_strokes: u32,
    #[serde(default = "defaults::vertices_min")]
    pub vertices_min: u32,
    #[serde(default = "defaults::vertices_max")]
    pub vertices_max: u32,
    #[serde(default = "defaults::thickness_min")]
    pub thickness_min: u32,
    #[serde(default = "defaults::thickness_max")]
    pub thickness_max: u32,
    #[serde(default = "defaults::binarize_threshold")]
    pub binarize_threshold: u8,
    #[serde(default = "defaults::strokes_are_holes")]
    pub strokes_are_holes: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "defaults::base_filters")]
    pub base_filters: usize,
    #[serde(default = "defaults::encoder_depth")]
    pub encoder_depth: usize,
    #[serde(default = "defaults::kernel")]
    pub kernel: usize,
    #[serde(default = "defaults::dilation")]
    pub dilation: usize,
    #[serde(default = "defaults::leaky_slope")]
    pub leaky_slope: f32,
    #[serde(default = "defaults::decoder_kernel")]
    pub decoder_kernel: usize,
    #[serde(default)]
    pub channel_doubling: bool,
    #[serde(default = "defaults::critic_depth")]
    pub critic_depth: usize,
    #[serde(default = "defaults::critic_base_filters")]
    pub critic_base_filters: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FeaturesSection {
    /// "seeded_random" or "pretrained_checkpoint".
    #[serde(default = "defaults::fx_source")]
    pub source: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// "vgg19_block3_conv3" or "reduced".
    #[serde(default = "defaults::fx_topology")]
    pub topology: String,
    #[serde(default = "defaults::reduced_widths")]
    pub reduced_widths: Vec<usize>,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "defaults::lr_generator")]
    pub lr_generator: f64,
    #[serde(default = "defaults::lr_critic")]
    pub lr_critic: f64,
    #[serde(default = "defaults::adam_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::n_critic")]
    pub n_critic: usize,
    #[serde(default = "defaults::clip_c")]
    pub clip_c: f64,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::adv_weight")]
    pub adv_weight: f64,
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub fixed_masks: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Hole-ratio bucket edges as [lo, hi] pairs.
    #[serde(default = "defaults::buckets")]
    pub buckets: Vec<[f64; 2]>,
    #[serde(default = "defaults::max_mask_tries")]
    pub max_mask_tries: u32,
    /// "seeded_small" or "standard_inception_checkpoint".
    #[serde(default = "defaults::embedder")]
    pub embedder: String,
    #[serde(default)]
    pub embedder_seed: u64,
    #[serde(default = "defaults::embedder_dim")]
    pub embedder_dim: usize,
    #[serde(default)]
    pub embedder_checkpoint: Option<PathBuf>,
    /// Rows of the side-by-side comparison grid to emit; 0 disables it.
    #[serde(default)]
    pub grid_rows: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

mod defaults {
    pub fn num_strokes() -> u32 { 4 }
    pub fn vertices_min() -> u32 { 4 }
    pub fn vertices_max() -> u32 { 12 }
    pub fn thickness_min() -> u32 { 5 }
    pub fn thickness_max() -> u32 { 15 }
    pub fn binarize_threshold() -> u8 { 127 }
    pub fn strokes_are_holes() -> bool { true }
    pub fn base_filters() -> usize { 64 }
    pub fn encoder_depth() -> usize { 4 }
    pub fn kernel() -> usize { 5 }
    pub fn dilation() -> usize { 2 }
    pub fn leaky_slope() -> f32 { 0.2 }
    pub fn decoder_kernel() -> usize { 4 }
    pub fn critic_depth() -> usize { 4 }
    pub fn critic_base_filters() -> usize { 64 }
    pub fn fx_source() -> String { "seeded_random".into() }
    pub fn fx_topology() -> String { "vgg19_block3_conv3".into() }
    pub fn reduced_widths() -> Vec<usize> { vec![8, 16] }
    pub fn lr_generator() -> f64 { 1e-4 }
    pub fn lr_critic() -> f64 { 1e-12 }
    pub fn adam_beta1() -> f64 { 0.9 }
    pub fn batch_size() -> usize { 5 }
    pub fn epochs() -> usize { 1 }
    pub fn n_critic() -> usize { 5 }
    pub fn clip_c() -> f64 { 0.01 }
    pub fn lambda() -> f64 { 0.4 }
    pub fn adv_weight() -> f64 { 1e-3 }
    pub fn buckets() -> Vec<[f64; 2]> { vec![[0.01, 0.2], [0.2, 0.4], [0.4, 0.6]] }
    pub fn max_mask_tries() -> u32 { 200 }
    pub fn embedder() -> String { "seeded_small".into() }
    pub fn embedder_dim() -> usize { 16 }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub masks: MaskSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub features: FeaturesSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// Every problem reported at once, before any compute.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.run.image_size == 0 {
            problems.push("run.image_size must be >= 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.data.train_fraction) {
            problems.push(format!("data.train_fraction {} outside [0,1]", self.data.train_fraction));
        }
        if self.data.train_manifest.is_some() != self.data.test_manifest.is_some() {
            problems.push("data.train_manifest and data.test_manifest must be given together".into());
        }
        match self.masks.mode.as_str() {
            "synthesize" => {}
            "load_directory" => {
                if self.masks.directory.is_none() {
                    problems.push("masks.directory required for load_directory mode".into());
                }
            }
            other => problems.push(format!("masks.mode {other:?} (expected synthesize or load_directory)")),
        }
        match self.features.source.as_str() {
            "seeded_random" => {}
            "pretrained_checkpoint" => {
                if self.features.checkpoint.is_none() {
                    problems.push("features.checkpoint required for pretrained_checkpoint source".into());
                }
            }
            other => problems.push(format!("features.source {other:?}")),
        }
        match self.features.topology.as_str() {
            "vgg19_block3_conv3" | "reduced" => {}
            other => problems.push(format!("features.topology {other:?}")),
        }
        match self.eval.embedder.as_str() {
            "seeded_small" => {}
            "standard_inception_checkpoint" => {
                if self.eval.embedder_checkpoint.is_none() {
                    problems.push("eval.embedder_checkpoint required for checkpoint embedder".into());
                }
            }
            other => problems.push(format!("eval.embedder {other:?}")),
        }
        for b in &self.eval.buckets {
            if HoleRatioBucket::new(b[0], b[1]).is_err() {
                problems.push(format!("eval bucket [{}, {}] invalid", b[0], b[1]));
            }
        }
        if !(0.0..=1.0).contains(&self.train.lambda) {
            problems.push(format!("train.lambda {} outside [0,1]", self.train.lambda));
        }
        let spec = self.generator_spec();
        if self.run.image_size % spec.spatial_divisor() != 0 {
            problems.push(format!(
                "run.image_size {} not divisible by 2^encoder_depth = {}",
                self.run.image_size,
                spec.spatial_divisor()
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            input_channels: 4,
            base_filters: self.model.base_filters,
            kernel: self.model.kernel,
            dilation: self.model.dilation,
            leaky_slope: self.model.leaky_slope,
            encoder_depth: self.model.encoder_depth,
            decoder_kernel: self.model.decoder_kernel,
            channel_doubling: self.model.channel_doubling,
        }
    }

    pub fn critic_spec(&self) -> CriticSpec {
        CriticSpec {
            depth: self.model.critic_depth,
            base_filters: self.model.critic_base_filters,
            ..CriticSpec::default()
        }
    }

    /// Resolve a checkpoint path against the cache-directory override.
    fn resolve_checkpoint(path: &Path) -> PathBuf {
        if path.is_relative() {
            if let Ok(cache) = std::env::var(CHECKPOINT_CACHE_ENV) {
                return PathBuf::from(cache).join(path);
            }
        }
        path.to_path_buf()
    }

    pub fn extractor_spec(&self) -> FeatureExtractorSpec {
        let topology = match self.features.topology.as_str() {
            "reduced" => ExtractorTopology::Reduced { widths: self.features.reduced_widths.clone() },
            _ => ExtractorTopology::Vgg19Block3Conv3,
        };
        let weights = match self.features.source.as_str() {
            "pretrained_checkpoint" => ExtractorWeights::PretrainedCheckpoint(Self::resolve_checkpoint(
                self.features.checkpoint.as_deref().unwrap_or(Path::new("")),
            )),
            _ => ExtractorWeights::SeededRandom(self.features.seed),
        };
        FeatureExtractorSpec { topology, weights }
    }

    pub fn embedder_spec(&self) -> EmbeddingExtractorSpec {
        let source = match self.eval.embedder.as_str() {
            "standard_inception_checkpoint" => EmbedderSource::StandardInceptionCheckpoint(
                Self::resolve_checkpoint(self.eval.embedder_checkpoint.as_deref().unwrap_or(Path::new(""))),
            ),
            _ => EmbedderSource::SeededSmallEmbedder(self.eval.embedder_seed),
        };
        EmbeddingExtractorSpec { source, dim: self.eval.embedder_dim }
    }

    pub fn mask_source_config(&self) -> MaskSourceConfig {
        let mode = match self.masks.mode.as_str() {
            "load_directory" => MaskMode::LoadDirectory(self.masks.directory.clone().unwrap_or_default()),
            _ => MaskMode::Synthesize(StrokeSpec {
                num_strokes: self.masks.num_strokes,
                vertices_min: self.masks.vertices_min,
                vertices_max: self.masks.vertices_max,
                thickness_min: self.masks.thickness_min,
                thickness_max: self.masks.thickness_max,
                canvas_height: self.run.image_size,
                canvas_width: self.run.image_size,
            }),
        };
        MaskSourceConfig {
            mode,
            target_height: self.run.image_size,
            target_width: self.run.image_size,
            binarize_threshold: self.masks.binarize_threshold,
            strokes_are_holes: self.masks.strokes_are_holes,
            seed: crate::rng::child_seed(self.run.seed, "mask-source"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr_generator: self.train.lr_generator,
            lr_critic: self.train.lr_critic,
            adam_beta1: self.train.adam_beta1,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            n_critic: self.train.n_critic,
            clip_c: self.train.clip_c,
            lambda: self.train.lambda,
            adv_weight: self.train.adv_weight,
            seed: self.run.seed,
            image_size: self.run.image_size,
            checkpoint_every: self.train.checkpoint_every,
            fixed_masks: self.train.fixed_masks,
            generator: self.generator_spec(),
            critic: self.critic_spec(),
            extractor: self.extractor_spec(),
        }
    }

    pub fn eval_buckets(&self) -> Vec<HoleRatioBucket> {
        self.eval
            .buckets
            .iter()
            .map(|b| HoleRatioBucket::new(b[0], b[1]).expect("validated"))
            .collect()
    }
}
