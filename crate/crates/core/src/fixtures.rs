//! Reader for golden fixture bundles (`fixtures/golden/`), the cross-check
//! between this engine and an independent reference implementation.
//!
//! Layout is documented in `docs/fixtures.md`. Weight blobs are not stored:
//! the bundle's `manifest.json` pins the digests of a synthetic VGG-19 that
//! [`GoldenFixture::materialize_weights`] regenerates.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::lexicon::{ThresholdSpec, WordCountTable};
use crate::net::{FeatureMapSet, Tap};
use crate::tensor::Tensor;
use crate::weights::{decode_f32le, sha256_hex, write_synthetic_vgg19, WeightManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureLayer {
    pub layer: usize,
    pub shape: [usize; 3],
    pub max: f64,
    pub sum: f64,
}

/// Contents of `fixture.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureMeta {
    pub synthetic_seed: u64,
    pub samples_per_layer: usize,
    pub sample_stride: u64,
    pub sample_offset: u64,
    pub threshold: ThresholdSpec,
    pub tap: Tap,
    pub input_shape: [usize; 3],
    pub layers: Vec<FixtureLayer>,
    pub sha256: BTreeMap<String, String>,
}

/// One sampled activation: flat index into a layer's `(C, H, W)` stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationSample {
    pub index: usize,
    pub value: f32,
}

#[derive(Debug, Clone)]
pub struct GoldenFixture {
    dir: PathBuf,
    pub meta: FixtureMeta,
}

impl GoldenFixture {
    /// Opens a bundle and verifies every file digest listed in `fixture.json`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let meta_path = dir.join("fixture.json");
        let text = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: FixtureMeta = serde_json::from_slice(&text)?;
        for (name, expected) in &meta.sha256 {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let actual = sha256_hex(&bytes);
            if &actual != expected {
                return Err(Error::Integrity {
                    path,
                    expected: expected.clone(),
                    actual,
                });
            }
        }
        Ok(GoldenFixture { dir, meta })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn read(&self, name: &str) -> Result<Vec<u8>> {
        let path = self.dir.join(name);
        fs::read(&path).map_err(|e| Error::io(&path, e))
    }

    pub fn input_image(&self) -> Result<ImageBuffer> {
        ImageBuffer::open(self.dir.join("input.png"))
    }

    /// The reference implementation's normalized input.
    pub fn input_tensor(&self) -> Result<Tensor> {
        let [c, h, w] = self.meta.input_shape;
        Tensor::new(c, h, w, decode_f32le(&self.read("input_tensor.bin")?))
    }

    /// The committed manifest, parsed without resolving blobs.
    pub fn committed_manifest(&self) -> Result<WeightManifest> {
        Ok(serde_json::from_slice(&self.read("manifest.json")?)?)
    }

    /// Regenerates the synthetic weights into `out_dir` and checks that the
    /// layer list (names, shapes and blob digests) and normalization match
    /// the committed manifest exactly.
    pub fn materialize_weights(&self, out_dir: impl AsRef<Path>) -> Result<WeightManifest> {
        let committed = self.committed_manifest()?;
        let written = write_synthetic_vgg19(out_dir, self.meta.synthetic_seed)?;
        if written.layers != committed.layers || written.normalization != committed.normalization {
            let first = written
                .layers
                .iter()
                .zip(&committed.layers)
                .find(|(a, b)| a != b)
                .map(|(a, _)| a.name.clone())
                .unwrap_or_else(|| "normalization".into());
            return Err(Error::Manifest {
                path: self.dir.join("manifest.json"),
                message: format!(
                    "regenerated weights differ from the committed manifest at {first}"
                ),
            });
        }
        Ok(written)
    }

    /// Sampled activations per layer, in layer order.
    pub fn activation_samples(&self) -> Result<Vec<Vec<ActivationSample>>> {
        let bytes = self.read("activations.bin")?;
        let per_layer = self.meta.samples_per_layer;
        let expected = self.meta.layers.len() * per_layer * 8;
        if bytes.len() != expected {
            return Err(Error::Format {
                path: self.dir.join("activations.bin"),
                message: format!("expected {expected} bytes, found {}", bytes.len()),
            });
        }
        Ok(bytes
            .chunks_exact(per_layer * 8)
            .map(|layer| {
                layer
                    .chunks_exact(8)
                    .map(|r| ActivationSample {
                        index: u32::from_le_bytes([r[0], r[1], r[2], r[3]]) as usize,
                        value: f32::from_le_bytes([r[4], r[5], r[6], r[7]]),
                    })
                    .collect()
            })
            .collect())
    }

    /// Golden word counts.
    pub fn counts(&self) -> Result<WordCountTable> {
        WordCountTable::read_csv(self.read("counts.csv")?.as_slice())
    }

    pub fn counts_path(&self) -> PathBuf {
        self.dir.join("counts.csv")
    }
}

/// Worst relative error per layer between computed maps and fixture
/// samples. The denominator is `max(|reference|, 1e-3 * layer max)`, so
/// near-zero activations are compared on the layer's scale.
pub fn activation_errors(
    maps: &FeatureMapSet,
    samples: &[Vec<ActivationSample>],
    layers: &[FixtureLayer],
) -> Result<Vec<f64>> {
    if maps.len() != samples.len() || samples.len() != layers.len() {
        return Err(Error::Config(format!(
            "{} computed layers, {} sampled layers, {} described layers",
            maps.len(),
            samples.len(),
            layers.len()
        )));
    }
    maps.maps()
        .iter()
        .zip(samples)
        .zip(layers)
        .map(|((map, layer_samples), meta)| {
            let (c, h, w) = map.shape();
            if [c, h, w] != meta.shape {
                return Err(Error::Config(format!(
                    "layer {} shape {:?}, fixture says {:?}",
                    meta.layer,
                    [c, h, w],
                    meta.shape
                )));
            }
            let floor = 1e-3 * meta.max.abs();
            let data = map.data();
            layer_samples
                .iter()
                .map(|s| {
                    let got = *data.get(s.index).ok_or_else(|| {
                        Error::Config(format!(
                            "sample index {} outside layer {}",
                            s.index, meta.layer
                        ))
                    })?;
                    let want = f64::from(s.value);
                    Ok(
                        (f64::from(got) - want).abs()
                            / want.abs().max(floor).max(f64::MIN_POSITIVE),
                    )
                })
                .try_fold(0.0f64, |acc, e: Result<f64>| Ok(acc.max(e?)))
        })
        .collect()
}
