//! Deterministic stand-in weights for VGG-19.
//!
//! Each array is a counter-based splitmix64 stream keyed by
//! `seed ^ ((2 * layer + role) << 48)` (role 0 = weights, 1 = bias). The top
//! 24 bits of each output give `u` in `[0, 1)`; values are `(2u - 1) * scale`
//! in `f32`, with `scale = sqrt(6 / fan_in)` for weights (He-uniform) and
//! [`SYNTHETIC_BIAS_SCALE`] for biases. `tools/golden/make_golden.py`
//! implements the same stream, so both sides produce bit-identical blobs.

use std::path::Path;

use super::{write_vgg19_bundle, Normalization, WeightManifest, VGG19_CONV_CHANNELS};
use crate::error::Result;
use crate::tensor::ConvWeights;

pub const SYNTHETIC_BIAS_SCALE: f32 = 0.05;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix_at(key: u64, i: u64) -> u64 {
    let mut z = key.wrapping_add((i + 1).wrapping_mul(GOLDEN_GAMMA));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform_symmetric(key: u64, n: usize, scale: f32) -> Vec<f32> {
    (0..n as u64)
        .map(|i| {
            let u = (splitmix_at(key, i) >> 40) as f32 * (1.0 / (1u32 << 24) as f32);
            (2.0 * u - 1.0) * scale
        })
        .collect()
}

fn stream_key(seed: u64, layer: usize, role: u64) -> u64 {
    seed ^ ((2 * layer as u64 + role) << 48)
}

/// The sixteen conv layers of a synthetic VGG-19.
pub fn synthetic_vgg19(seed: u64) -> Result<Vec<ConvWeights>> {
    let mut in_channels = 3;
    let mut convs = Vec::with_capacity(VGG19_CONV_CHANNELS.len());
    for (i, &out) in VGG19_CONV_CHANNELS.iter().enumerate() {
        let layer = i + 1;
        let fan_in = in_channels * 9;
        let scale = (6.0f64 / fan_in as f64).sqrt() as f32;
        let weights = uniform_symmetric(stream_key(seed, layer, 0), out * fan_in, scale);
        let bias = uniform_symmetric(stream_key(seed, layer, 1), out, SYNTHETIC_BIAS_SCALE);
        convs.push(ConvWeights::new(out, in_channels, 3, 3, weights, bias)?);
        in_channels = out;
    }
    Ok(convs)
}

/// Writes a synthetic VGG-19 bundle with ImageNet normalization into `dir`.
pub fn write_synthetic_vgg19(dir: impl AsRef<Path>, seed: u64) -> Result<WeightManifest> {
    write_vgg19_bundle(dir, &Normalization::imagenet(), &synthetic_vgg19(seed)?)
}
