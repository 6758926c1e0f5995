//! VGG-19 feature extractor: the sixteen conv layers, their ReLUs and the
//! five max pools. The classifier head is never built.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, maxpool2, relu_in_place, ConvWeights, Tensor};
use crate::weights::{Normalization, WeightManifest, VGG19_CONV_CHANNELS, VGG19_POOL_AFTER};

pub const INPUT_SIZE: usize = 224;

/// Which activation of each conv layer is captured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tap {
    #[default]
    PostRelu,
    PreRelu,
}

/// Loaded, immutable VGG-19 conv stack. Shareable across threads.
#[derive(Debug, Clone)]
pub struct Vgg19 {
    convs: Vec<ConvWeights>,
    normalization: Normalization,
    digest: String,
}

impl Vgg19 {
    pub fn from_manifest(manifest: &WeightManifest) -> Result<Self> {
        let convs = manifest.load_all_conv()?;
        Self::from_parts(convs, manifest.normalization.clone(), manifest.digest())
    }

    pub fn from_parts(
        convs: Vec<ConvWeights>,
        normalization: Normalization,
        digest: impl Into<String>,
    ) -> Result<Self> {
        if convs.len() != VGG19_CONV_CHANNELS.len() {
            return Err(Error::Config(format!(
                "vgg19 needs {} conv layers, got {}",
                VGG19_CONV_CHANNELS.len(),
                convs.len()
            )));
        }
        let mut in_channels = 3;
        for (i, (conv, &out)) in convs.iter().zip(&VGG19_CONV_CHANNELS).enumerate() {
            if conv.in_channels() != in_channels || conv.out_channels() != out {
                return Err(Error::Config(format!(
                    "conv #{} is {}->{}, expected {in_channels}->{out}",
                    i + 1,
                    conv.in_channels(),
                    conv.out_channels()
                )));
            }
            in_channels = out;
        }
        Ok(Vgg19 {
            convs,
            normalization,
            digest: digest.into(),
        })
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    /// Digest of the manifest the weights came from.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn convs(&self) -> &[ConvWeights] {
        &self.convs
    }

    /// Runs the conv stack on a normalized 3x224x224 input and keeps the
    /// activation of every conv layer.
    pub fn forward_collect(&self, input: &Tensor, tap: Tap) -> Result<FeatureMapSet> {
        if input.shape() != (3, INPUT_SIZE, INPUT_SIZE) {
            let (c, h, w) = input.shape();
            return Err(Error::Argument(format!(
                "network input must be 3x{INPUT_SIZE}x{INPUT_SIZE}, got {c}x{h}x{w}"
            )));
        }
        let mut maps = Vec::with_capacity(self.convs.len());
        let mut x = input.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let mut y = conv2d(&x, conv, 1, 1)?;
            if tap == Tap::PreRelu {
                maps.push(y.clone());
            }
            relu_in_place(&mut y);
            if tap == Tap::PostRelu {
                maps.push(y.clone());
            }
            x = if VGG19_POOL_AFTER.contains(&(i + 1)) {
                maxpool2(&y)?
            } else {
                y
            };
        }
        Ok(FeatureMapSet { maps, tap })
    }
}

/// The sixteen captured activation stacks of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapSet {
    maps: Vec<Tensor>,
    tap: Tap,
}

impl FeatureMapSet {
    /// Builds a set from arbitrary stacks, e.g. for tests on small maps.
    pub fn from_maps(maps: Vec<Tensor>, tap: Tap) -> Self {
        FeatureMapSet { maps, tap }
    }

    pub fn maps(&self) -> &[Tensor] {
        &self.maps
    }

    /// 1-based layer access.
    pub fn layer(&self, layer: usize) -> Option<&Tensor> {
        layer.checked_sub(1).and_then(|i| self.maps.get(i))
    }

    pub fn tap(&self) -> Tap {
        self.tap
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// Total number of kernels (feature maps) across all layers.
    pub fn kernel_count(&self) -> usize {
        self.maps.iter().map(Tensor::channels).sum()
    }
}

/// Spatial size of conv layer `layer` (1-based) for a 224 input.
pub fn vgg19_spatial_size(layer: usize) -> usize {
    let pools_before = VGG19_POOL_AFTER.iter().filter(|&&p| p < layer).count();
    INPUT_SIZE >> pools_before
}
