//! Image "texts" from VGG-19 feature maps, and the rank-frequency,
//! vocabulary-growth and leading-position laws fitted to them.
//!
//! Each convolution kernel is a word type. Its word count for an image is
//! the number of pixels of its feature map above a per-map threshold (by
//! default, strictly above the nearest-rank 90th percentile). The table of
//! counts for one image is then scored against Zipf's, Heaps' and Benford's
//! laws.
//!
//! ```no_run
//! use lexivis_core::{analyze_roi, center_roi, load_manifest, AnalysisConfig, ImageBuffer, Vgg19};
//!
//! let manifest = load_manifest("weights/manifest.json")?;
//! let net = Vgg19::from_manifest(&manifest)?;
//! let roi = center_roi(&ImageBuffer::open("photo.jpg")?)?;
//! let (report, _table) = analyze_roi(&net, &roi, "photo", None, &AnalysisConfig::default())?;
//! println!("zipf R² = {:?}", report.zipf_r2());
//! # Ok::<(), lexivis_core::Error>(())
//! ```

pub mod error;
pub mod fixtures;
pub mod image;
pub mod laws;
pub mod lexicon;
pub mod net;
pub mod report;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use fixtures::GoldenFixture;
pub use image::{
    center_roi, crop_roi, dilate, erode, gaussian_blur, salt_pepper, to_input_tensor, ImageBuffer,
    PerturbationKind, PerturbationSpec,
};
pub use laws::{
    benford_analysis, benford_expected, heaps_analysis, ols_fit, zipf_analysis, BenfordResult,
    FitResult, HeapsResult, ZipfResult,
};
pub use lexicon::{extract_lexicon, word_count, ThresholdMode, ThresholdSpec, WordCountTable};
pub use net::{FeatureMapSet, Tap, Vgg19};
pub use report::{
    analyze_roi, fit_table, run_sweep, AnalysisConfig, LawOutcome, LawReport, RoiSpec, SweepResult,
};
pub use tensor::{conv2d, maxpool2, quantile_nearest_rank, relu, ConvWeights, Tensor};
pub use weights::{load_manifest, Normalization, WeightManifest};
