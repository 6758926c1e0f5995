//! The portable weight format: a `manifest.json` describing the layer stack
//! plus one raw little-endian `f32` blob per weight and bias array.
//!
//! See `docs/weights-format.md` for the field-by-field layout.

mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::ConvWeights;

pub use synthetic::{synthetic_vgg19, write_synthetic_vgg19, SYNTHETIC_BIAS_SCALE};

pub const FORMAT_VERSION: u32 = 1;
pub const VGG19: &str = "vgg19";
pub const DTYPE_F32LE: &str = "f32le";

/// Output channels of the sixteen VGG-19 conv layers, in forward order.
pub const VGG19_CONV_CHANNELS: [usize; 16] = [
    64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512, 512, 512, 512,
];

/// 1-based conv indices that are followed by a 2x2 max pool.
pub const VGG19_POOL_AFTER: [usize; 5] = [2, 4, 8, 12, 16];

/// Conv layers per VGG-19 block.
pub(crate) const VGG19_BLOCKS: [usize; 5] = [2, 2, 4, 4, 4];

/// `(block, index-in-block)` suffix, e.g. `"3_2"`, for 1-based conv `layer`.
pub fn vgg19_layer_suffix(layer: usize) -> String {
    let mut remaining = layer;
    for (block, &n) in VGG19_BLOCKS.iter().enumerate() {
        if remaining <= n {
            return format!("{}_{}", block + 1, remaining);
        }
        remaining -= n;
    }
    format!("x_{layer}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelOrder {
    Rgb,
    Bgr,
}

/// Preprocessing the network expects: `(pixel / pixel_scale - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
    pub channel_order: ChannelOrder,
    pub pixel_scale: f32,
}

impl Normalization {
    /// torchvision ImageNet statistics.
    pub fn imagenet() -> Self {
        Normalization {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
            channel_order: ChannelOrder::Rgb,
            pixel_scale: 255.0,
        }
    }
}

/// Reference to one raw array on disk, relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub path: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub sha256: String,
}

impl BlobRef {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weights: BlobRef,
    pub bias: BlobRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum LayerOp {
    Conv(ConvSpec),
    Relu,
    Maxpool { kernel: usize, stride: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub op: LayerOp,
}

/// A validated manifest. Blobs are located but not read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub format_version: u32,
    pub arch_name: String,
    pub normalization: Normalization,
    pub layers: Vec<LayerSpec>,
    #[serde(skip)]
    base_dir: PathBuf,
    #[serde(skip)]
    digest: String,
}

impl WeightManifest {
    /// Directory blob paths are resolved against.
    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// sha256 of the manifest file bytes, recorded in reports.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn conv_specs(&self) -> impl Iterator<Item = (&str, &ConvSpec)> {
        self.layers.iter().filter_map(|l| match &l.op {
            LayerOp::Conv(c) => Some((l.name.as_str(), c)),
            _ => None,
        })
    }

    pub fn load_conv_weights(&self, spec: &ConvSpec) -> Result<ConvWeights> {
        load_conv_weights(&self.base_dir, spec)
    }

    /// Loads every conv layer in forward order.
    pub fn load_all_conv(&self) -> Result<Vec<ConvWeights>> {
        self.conv_specs()
            .map(|(_, spec)| self.load_conv_weights(spec))
            .collect()
    }
}

/// Reads and fully validates `manifest.json`; checks that every blob exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<WeightManifest> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest_err = |message: String| Error::Manifest {
        path: path.to_path_buf(),
        message,
    };
    let mut manifest: WeightManifest =
        serde_json::from_slice(&bytes).map_err(|e| manifest_err(e.to_string()))?;
    manifest.base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    manifest.digest = sha256_hex(&bytes);

    if manifest.format_version != FORMAT_VERSION {
        return Err(manifest_err(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }
    if manifest.arch_name != VGG19 {
        return Err(manifest_err(format!(
            "unknown arch {:?}; only {VGG19:?} is supported",
            manifest.arch_name
        )));
    }
    validate_normalization(&manifest.normalization).map_err(manifest_err)?;
    validate_vgg19_sequence(&manifest.layers).map_err(manifest_err)?;

    for (_, spec) in manifest.conv_specs() {
        for blob in [&spec.weights, &spec.bias] {
            let blob_path = manifest.base_dir.join(&blob.path);
            fs::metadata(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        }
    }
    Ok(manifest)
}

fn validate_normalization(n: &Normalization) -> std::result::Result<(), String> {
    if !(n.pixel_scale.is_finite() && n.pixel_scale > 0.0) {
        return Err(format!(
            "pixel_scale must be positive, got {}",
            n.pixel_scale
        ));
    }
    if n.std.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(format!("std entries must be positive, got {:?}", n.std));
    }
    if n.mean.iter().any(|m| !m.is_finite()) {
        return Err(format!("mean entries must be finite, got {:?}", n.mean));
    }
    Ok(())
}

fn validate_vgg19_sequence(layers: &[LayerSpec]) -> std::result::Result<(), String> {
    let convs: Vec<(&str, &ConvSpec)> = layers
        .iter()
        .filter_map(|l| match &l.op {
            LayerOp::Conv(c) => Some((l.name.as_str(), c)),
            _ => None,
        })
        .collect();
    if convs.len() != VGG19_CONV_CHANNELS.len() {
        return Err(format!(
            "layer-sequence violation: expected {} conv layers, found {}",
            VGG19_CONV_CHANNELS.len(),
            convs.len()
        ));
    }

    let mut in_channels = 3;
    for (i, ((name, conv), &out)) in convs.iter().zip(&VGG19_CONV_CHANNELS).enumerate() {
        let at = format!("conv #{} ({name})", i + 1);
        if conv.in_channels != in_channels || conv.out_channels != out {
            return Err(format!(
                "layer-sequence violation: {at} is {}->{}, expected {in_channels}->{out}",
                conv.in_channels, conv.out_channels
            ));
        }
        if conv.kernel != 3 || conv.stride != 1 || conv.padding != 1 {
            return Err(format!(
                "{at}: expected kernel 3 / stride 1 / padding 1, got {} / {} / {}",
                conv.kernel, conv.stride, conv.padding
            ));
        }
        let wshape = [out, in_channels, 3, 3];
        if conv.weights.shape != wshape {
            return Err(format!(
                "{at}: weights shape {:?}, expected {wshape:?}",
                conv.weights.shape
            ));
        }
        if conv.bias.shape != [out] {
            return Err(format!(
                "{at}: bias shape {:?}, expected [{out}]",
                conv.bias.shape
            ));
        }
        for blob in [&conv.weights, &conv.bias] {
            if blob.dtype != DTYPE_F32LE {
                return Err(format!("{at}: unsupported dtype {:?}", blob.dtype));
            }
        }
        in_channels = out;
    }

    let expected = vgg19_kind_sequence();
    let actual: Vec<&'static str> = layers.iter().map(|l| kind_name(&l.op)).collect();
    if actual != expected {
        let at = actual
            .iter()
            .zip(&expected)
            .position(|(a, e)| a != e)
            .unwrap_or(actual.len().min(expected.len()));
        return Err(format!(
            "layer-sequence violation at position {at}: expected {:?}, found {:?}",
            expected.get(at),
            actual.get(at)
        ));
    }
    for l in layers {
        if let LayerOp::Maxpool { kernel, stride } = l.op {
            if kernel != 2 || stride != 2 {
                return Err(format!(
                    "{}: expected 2x2 stride-2 pooling, got kernel {kernel} stride {stride}",
                    l.name
                ));
            }
        }
    }
    Ok(())
}

fn kind_name(op: &LayerOp) -> &'static str {
    match op {
        LayerOp::Conv(_) => "conv",
        LayerOp::Relu => "relu",
        LayerOp::Maxpool { .. } => "maxpool",
    }
}

fn vgg19_kind_sequence() -> Vec<&'static str> {
    let mut seq = Vec::with_capacity(37);
    for i in 1..=VGG19_CONV_CHANNELS.len() {
        seq.push("conv");
        seq.push("relu");
        if VGG19_POOL_AFTER.contains(&i) {
            seq.push("maxpool");
        }
    }
    seq
}

/// Reads one conv layer: length check, then checksum, then decode.
pub fn load_conv_weights(base_dir: &Path, spec: &ConvSpec) -> Result<ConvWeights> {
    let weights = read_blob(base_dir, &spec.weights)?;
    let bias = read_blob(base_dir, &spec.bias)?;
    ConvWeights::new(
        spec.out_channels,
        spec.in_channels,
        spec.kernel,
        spec.kernel,
        weights,
        bias,
    )
}

fn read_blob(base_dir: &Path, blob: &BlobRef) -> Result<Vec<f32>> {
    let path = base_dir.join(&blob.path);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected_len = blob.element_count() * 4;
    if bytes.len() != expected_len {
        return Err(Error::Format {
            path,
            message: format!(
                "expected {expected_len} bytes for shape {:?}, found {}",
                blob.shape,
                bytes.len()
            ),
        });
    }
    let actual = sha256_hex(&bytes);
    if !actual.eq_ignore_ascii_case(&blob.sha256) {
        return Err(Error::Integrity {
            path,
            expected: blob.sha256.clone(),
            actual,
        });
    }
    Ok(decode_f32le(&bytes))
}

pub fn decode_f32le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}

pub fn encode_f32le(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes a VGG-19 bundle (`manifest.json` plus blobs) into `dir` and loads
/// it back through [`load_manifest`].
pub fn write_vgg19_bundle(
    dir: impl AsRef<Path>,
    normalization: &Normalization,
    convs: &[ConvWeights],
) -> Result<WeightManifest> {
    let dir = dir.as_ref();
    if convs.len() != VGG19_CONV_CHANNELS.len() {
        return Err(Error::Config(format!(
            "vgg19 bundle needs {} conv layers, got {}",
            VGG19_CONV_CHANNELS.len(),
            convs.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let write_blob = |file: String, shape: Vec<usize>, values: &[f32]| -> Result<BlobRef> {
        let bytes = encode_f32le(values);
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        Ok(BlobRef {
            path: file,
            shape,
            dtype: DTYPE_F32LE.into(),
            sha256: sha256_hex(&bytes),
        })
    };

    let mut layers = Vec::new();
    for (i, conv) in convs.iter().enumerate() {
        let layer = i + 1;
        let suffix = vgg19_layer_suffix(layer);
        let (kh, kw) = conv.kernel_size();
        if kh != kw {
            return Err(Error::Config(format!("conv{suffix}: non-square kernel")));
        }
        let weights = write_blob(
            format!("conv{suffix}.weight.bin"),
            vec![conv.out_channels(), conv.in_channels(), kh, kw],
            conv.weights(),
        )?;
        let bias = write_blob(
            format!("conv{suffix}.bias.bin"),
            vec![conv.out_channels()],
            conv.bias(),
        )?;
        layers.push(LayerSpec {
            name: format!("conv{suffix}"),
            op: LayerOp::Conv(ConvSpec {
                in_channels: conv.in_channels(),
                out_channels: conv.out_channels(),
                kernel: kh,
                stride: 1,
                padding: 1,
                weights,
                bias,
            }),
        });
        layers.push(LayerSpec {
            name: format!("relu{suffix}"),
            op: LayerOp::Relu,
        });
        if VGG19_POOL_AFTER.contains(&layer) {
            let block = suffix.split('_').next().unwrap_or_default().to_owned();
            layers.push(LayerSpec {
                name: format!("pool{block}"),
                op: LayerOp::Maxpool {
                    kernel: 2,
                    stride: 2,
                },
            });
        }
    }

    let manifest = WeightManifest {
        format_version: FORMAT_VERSION,
        arch_name: VGG19.into(),
        normalization: normalization.clone(),
        layers,
        base_dir: dir.to_path_buf(),
        digest: String::new(),
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    load_manifest(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_bundle() -> (tempfile::TempDir, WeightManifest) {
        let dir = tempfile::tempdir().unwrap();
        let convs: Vec<ConvWeights> = synthetic_vgg19(7).unwrap();
        let m = write_vgg19_bundle(dir.path(), &Normalization::imagenet(), &convs).unwrap();
        (dir, m)
    }

    #[test]
    fn parameter_count_matches_independent_sum() {
        // sum of out * in * 9 over the declared shapes, done by hand:
        // 1728 + 36864 + 73728 + 147456 + 294912 + 3 * 589824
        //   + 1179648 + 7 * 2359296 = 20_018_880
        let convs = synthetic_vgg19(1).unwrap();
        let weights: usize = convs.iter().map(|c| c.weights().len()).sum();
        let biases: usize = convs.iter().map(|c| c.bias().len()).sum();
        assert_eq!(weights, 20_018_880);
        assert_eq!(biases, 5_504);
        assert_eq!(weights + biases, 20_024_384);
    }

    #[test]
    fn manifest_lists_vgg19_layers_in_order() {
        let (_dir, m) = tiny_bundle();
        let kinds: Vec<_> = m.layers.iter().map(|l| kind_name(&l.op)).collect();
        assert_eq!(kinds.iter().filter(|k| **k == "conv").count(), 16);
        assert_eq!(kinds.iter().filter(|k| **k == "relu").count(), 16);
        assert_eq!(kinds.iter().filter(|k| **k == "maxpool").count(), 5);
        assert_eq!(kinds.len(), 37);
        let outs: Vec<usize> = m.conv_specs().map(|(_, c)| c.out_channels).collect();
        assert_eq!(outs, VGG19_CONV_CHANNELS);
        assert_eq!(m.layers[0].name, "conv1_1");
        assert_eq!(m.layers[4].name, "pool1");
    }

    #[test]
    fn fifteen_convs_is_a_sequence_error() {
        let (dir, m) = tiny_bundle();
        let mut json: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        let layers = json["layers"].as_array_mut().unwrap();
        // drop conv5_4 and its relu
        let pos = layers.iter().position(|l| l["name"] == "conv5_4").unwrap();
        layers.drain(pos..pos + 2);
        let path = dir.path().join("short.json");
        fs::write(&path, serde_json::to_vec(&json).unwrap()).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(
            matches!(&err, Error::Manifest { message, .. } if message.contains("15")),
            "{err}"
        );
        drop(m);
    }

    #[test]
    fn unknown_arch_is_rejected() {
        let (dir, _) = tiny_bundle();
        let path = dir.path().join("manifest.json");
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("vgg19", "resnet50");
        fs::write(&path, text).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(&err, Error::Manifest { message, .. } if message.contains("resnet50")));
    }

    #[test]
    fn malformed_json_is_a_manifest_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Manifest { .. })));
    }

    #[test]
    fn missing_blob_names_the_path() {
        let (dir, _) = tiny_bundle();
        let blob = dir.path().join("conv3_2.bias.bin");
        fs::remove_file(&blob).unwrap();
        let err = load_manifest(dir.path().join("manifest.json")).unwrap_err();
        match err {
            Error::Io { path, .. } => assert_eq!(path, blob),
            other => panic!("expected I/O error, got {other}"),
        }
    }

    #[test]
    fn first_layer_loads_with_declared_shape() {
        let (_dir, m) = tiny_bundle();
        let (_, spec) = m.conv_specs().next().unwrap();
        let w = m.load_conv_weights(spec).unwrap();
        assert_eq!(w.out_channels(), 64);
        assert_eq!(w.in_channels(), 3);
        assert_eq!(w.kernel_size(), (3, 3));
        assert_eq!(w.weights().len(), 1_728);
        assert_eq!(
            fs::metadata(m.base_dir().join(&spec.weights.path))
                .unwrap()
                .len(),
            6_912
        );
        assert_eq!(w.bias().len(), 64);
    }

    #[test]
    fn truncated_blob_is_a_format_error() {
        let (dir, m) = tiny_bundle();
        let blob = dir.path().join("conv1_1.weight.bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 3]).unwrap();
        let (_, spec) = m.conv_specs().next().unwrap();
        assert!(matches!(
            m.load_conv_weights(spec),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn bit_flip_is_an_integrity_error() {
        let (dir, m) = tiny_bundle();
        let blob = dir.path().join("conv1_1.weight.bin");
        let mut bytes = fs::read(&blob).unwrap();
        bytes[100] ^= 0x04;
        fs::write(&blob, &bytes).unwrap();
        let (_, spec) = m.conv_specs().next().unwrap();
        assert!(matches!(
            m.load_conv_weights(spec),
            Err(Error::Integrity { .. })
        ));
    }

    #[test]
    fn reload_is_deterministic() {
        let (dir, m) = tiny_bundle();
        let again = load_manifest(dir.path().join("manifest.json")).unwrap();
        assert_eq!(m, again);
        assert_eq!(m.digest(), again.digest());
        let a = m.load_all_conv().unwrap();
        let b = again.load_all_conv().unwrap();
        assert_eq!(a, b);
        assert_eq!(a, synthetic_vgg19(7).unwrap());
    }

    #[test]
    fn layer_suffixes() {
        assert_eq!(vgg19_layer_suffix(1), "1_1");
        assert_eq!(vgg19_layer_suffix(4), "2_2");
        assert_eq!(vgg19_layer_suffix(5), "3_1");
        assert_eq!(vgg19_layer_suffix(16), "5_4");
    }
}
