//! Frozen convolutional feature extractor for the feature-space losses.
//!
//! The standard topology mirrors the VGG-19 convolutional stack up to its
//! third block's third convolution (tap after the ReLU): widths
//! 64,64,P,128,128,P,256,256,256, giving 256 channels at 1/4 resolution.
//! Weights come either from a pretrained checkpoint exported into the
//! crate's checkpoint format or from a seeded random build; both are
//! frozen — gradients flow to the input image only, never to the weights.
//!
//! A reduced topology with the same interface exists so the test suite
//! and smoke runs stay self-contained without a pretrained download.

use std::path::PathBuf;

use ndarray::{Array3, Axis};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{NamedTensor, ParameterSet};
use crate::nn::act::{relu_backward, relu_forward};
use crate::nn::conv::{Conv2d, Padding};
use crate::nn::init;
use crate::nn::pool::{maxpool2_backward, maxpool2_forward};
use crate::nn::Batch;
use crate::rng::rng_from;

/// Per-channel means subtracted after rescaling to [0,255] (RGB order),
/// matching the pretrained stack's original training convention. No
/// variance scaling.
pub const CHANNEL_MEANS: [f32; 3] = [123.68, 116.779, 103.939];

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ExtractorTopology {
    /// 64,64,P,128,128,P,256,256,256 with 3x3 kernels.
    Vgg19Block3Conv3,
    /// Small stack for offline tests: one 3x3 conv per width, 2x2 pool
    /// between consecutive convs.
    Reduced { widths: Vec<usize> },
}

impl ExtractorTopology {
    fn conv_widths(&self) -> Vec<usize> {
        match self {
            ExtractorTopology::Vgg19Block3Conv3 => vec![64, 64, 128, 128, 256, 256, 256],
            ExtractorTopology::Reduced { widths } => widths.clone(),
        }
    }

    /// Pool placed after conv index i?
    fn pool_after(&self, i: usize, n: usize) -> bool {
        match self {
            ExtractorTopology::Vgg19Block3Conv3 => i == 1 || i == 3,
            ExtractorTopology::Reduced { .. } => i + 1 < n,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ExtractorTopology::Vgg19Block3Conv3 => "vgg19_block3_conv3".into(),
            ExtractorTopology::Reduced { widths } => format!(
                "reduced[{}]",
                widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ExtractorWeights {
    PretrainedCheckpoint(PathBuf),
    SeededRandom(u64),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureExtractorSpec {
    pub topology: ExtractorTopology,
    pub weights: ExtractorWeights,
}

impl FeatureExtractorSpec {
    /// Standard stack with seeded weights.
    pub fn seeded_standard(seed: u64) -> Self {
        FeatureExtractorSpec {
            topology: ExtractorTopology::Vgg19Block3Conv3,
            weights: ExtractorWeights::SeededRandom(seed),
        }
    }

    /// Two-conv reduced stack for tests and smoke training.
    pub fn seeded_small(seed: u64) -> Self {
        FeatureExtractorSpec {
            topology: ExtractorTopology::Reduced { widths: vec![8, 16] },
            weights: ExtractorWeights::SeededRandom(seed),
        }
    }
}

pub struct FeatureExtractor {
    spec: FeatureExtractorSpec,
    convs: Vec<Conv2d>,
    pools: Vec<bool>,
    identity: String,
}

pub struct ExtractorCache {
    conv_in: Vec<Batch>,
    pre_act: Vec<Batch>,
    pool_arg: Vec<Option<ndarray::Array4<u8>>>,
    features: Batch,
}

impl ExtractorCache {
    pub fn features(&self) -> &Batch {
        &self.features
    }
}

impl FeatureExtractor {
    pub fn new(spec: &FeatureExtractorSpec) -> Result<Self> {
        let widths = spec.topology.conv_widths();
        if widths.is_empty() {
            return Err(Error::InvalidSpec("feature extractor needs at least one conv".into()));
        }
        let n = widths.len();
        let pools = (0..n).map(|i| spec.topology.pool_after(i, n)).collect();

        let convs = match &spec.weights {
            ExtractorWeights::SeededRandom(seed) => {
                let mut rng = rng_from(*seed);
                let mut convs = Vec::with_capacity(n);
                let mut in_c = 3;
                for &w in &widths {
                    convs.push(Conv2d {
                        weight: init::conv_weight(&mut rng, w, in_c, 3, 3),
                        bias: init::zero_bias(w),
                        stride: 1,
                        dilation: 1,
                        pad: Padding::symmetric(1),
                    });
                    in_c = w;
                }
                convs
            }
            ExtractorWeights::PretrainedCheckpoint(path) => {
                let params = checkpoint::load_parameter_set(path)?;
                let mut convs = Vec::with_capacity(n);
                let mut in_c = 3;
                for (i, &w) in widths.iter().enumerate() {
                    let weight = params
                        .get(&format!("conv{i}.weight"))
                        .ok_or_else(|| Error::CorruptCheckpoint(format!("extractor missing conv{i}.weight")))?;
                    let bias = params
                        .get(&format!("conv{i}.bias"))
                        .ok_or_else(|| Error::CorruptCheckpoint(format!("extractor missing conv{i}.bias")))?;
                    if weight.shape != [w, in_c, 3, 3] || bias.shape != [w] {
                        return Err(Error::CorruptCheckpoint(format!(
                            "extractor conv{i} shape mismatch: {:?}",
                            weight.shape
                        )));
                    }
                    convs.push(Conv2d {
                        weight: ndarray::Array4::from_shape_vec((w, in_c, 3, 3), weight.data.clone()).unwrap(),
                        bias: ndarray::Array1::from_vec(bias.data.clone()),
                        stride: 1,
                        dilation: 1,
                        pad: Padding::symmetric(1),
                    });
                    in_c = w;
                }
                convs
            }
        };

        let source = match &spec.weights {
            ExtractorWeights::SeededRandom(seed) => format!("seeded_random({seed})"),
            ExtractorWeights::PretrainedCheckpoint(p) => format!("pretrained_checkpoint({})", p.display()),
        };
        let mut fx = FeatureExtractor {
            spec: spec.clone(),
            convs,
            pools,
            identity: String::new(),
        };
        fx.identity = format!(
            "{};topology={};params_sha256={}",
            source,
            spec.topology.label(),
            fx.params_hash()
        );
        Ok(fx)
    }

    pub fn spec(&self) -> &FeatureExtractorSpec {
        &self.spec
    }

    /// Source + topology + weight hash, recorded in training logs.
    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn params_hash(&self) -> String {
        self.params().sha256_hex()
    }

    pub fn params(&self) -> ParameterSet {
        let mut tensors = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            tensors.push(NamedTensor {
                name: format!("conv{i}.weight"),
                shape: c.weight.shape().to_vec(),
                data: c.weight.as_slice().unwrap().to_vec(),
            });
            tensors.push(NamedTensor {
                name: format!("conv{i}.bias"),
                shape: vec![c.bias.len()],
                data: c.bias.as_slice().unwrap().to_vec(),
            });
        }
        ParameterSet { tensors }
    }

    pub fn output_channels(&self) -> usize {
        self.convs.last().unwrap().out_channels()
    }

    /// Spatial downscale factor from input to feature grid.
    pub fn spatial_factor(&self) -> usize {
        1 << self.pools.iter().filter(|&&p| p).count()
    }

    fn preprocess(&self, x_model: &Batch) -> Batch {
        let mut out = x_model.clone();
        for c in 0..3 {
            let mean = CHANNEL_MEANS[c];
            out.index_axis_mut(Axis(1), c).mapv_inplace(|v| (v + 1.0) * 127.5 - mean);
        }
        out
    }

    /// Feature grid for a model-range batch.
    pub fn forward(&self, x_model: &Batch) -> Result<Batch> {
        Ok(self.forward_with_cache(x_model)?.features)
    }

    pub fn forward_with_cache(&self, x_model: &Batch) -> Result<ExtractorCache> {
        let div = self.spatial_factor() * 2;
        let (_, c, h, w) = x_model.dim();
        if c != 3 || h % div != 0 || w % div != 0 {
            return Err(Error::shape(
                "feature extractor input",
                format!("(N,3,H,W) with H,W divisible by {div}"),
                format!("{:?}", x_model.dim()),
            ));
        }
        let mut conv_in = Vec::new();
        let mut pre_act = Vec::new();
        let mut pool_arg = Vec::new();
        let mut x = self.preprocess(x_model);
        for (i, conv) in self.convs.iter().enumerate() {
            conv_in.push(x.clone());
            let pre = conv.forward(&x);
            x = relu_forward(&pre);
            pre_act.push(pre);
            if self.pools[i] {
                let (pooled, arg) = maxpool2_forward(&x);
                pool_arg.push(Some(arg));
                x = pooled;
            } else {
                pool_arg.push(None);
            }
        }
        Ok(ExtractorCache {
            conv_in,
            pre_act,
            pool_arg,
            features: x,
        })
    }

    /// Gradient w.r.t. the model-range input. Extractor weights receive no
    /// gradient by construction.
    pub fn backward_input(&self, cache: &ExtractorCache, grad_features: &Batch) -> Batch {
        let mut g = grad_features.clone();
        for i in (0..self.convs.len()).rev() {
            if let Some(arg) = &cache.pool_arg[i] {
                g = maxpool2_backward(arg, &g);
            }
            g = relu_backward(&cache.pre_act[i], &g);
            g = self.convs[i].backward_input_only(&cache.conv_in[i], &g);
        }
        // chain through the [-1,1] -> [0,255] affine preprocessing
        g.mapv_inplace(|v| v * 127.5);
        g
    }
}

/// Spec-level op: features of one image (any declared range; converted to
/// model range internally, preprocessing applied).
pub fn extract_features(fx: &FeatureExtractor, img: &Image) -> Result<Array3<f32>> {
    let model = img.to_model();
    let batch = crate::model::images_to_batch(std::slice::from_ref(&model))?;
    let features = fx.forward(&batch)?;
    Ok(features.index_axis(Axis(0), 0).to_owned())
}
