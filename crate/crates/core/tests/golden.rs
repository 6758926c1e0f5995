use std::path::PathBuf;
use std::sync::OnceLock;

use lexivis_core::fixtures::{activation_errors, GoldenFixture};
use lexivis_core::{extract_lexicon, load_manifest, to_input_tensor, FeatureMapSet, Vgg19};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/golden")
}

struct Run {
    fixture: GoldenFixture,
    maps: FeatureMapSet,
}

// One forward pass shared by the tests below.
fn run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let fixture = GoldenFixture::open(fixture_dir()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        fixture.materialize_weights(dir.path()).unwrap();
        let manifest = load_manifest(dir.path().join("manifest.json")).unwrap();
        let net = Vgg19::from_manifest(&manifest).unwrap();
        let input = fixture.input_tensor().unwrap();
        let maps = net.forward_collect(&input, fixture.meta.tap).unwrap();
        Run { fixture, maps }
    })
}

#[test]
fn regenerated_weights_match_committed_digests() {
    let fixture = GoldenFixture::open(fixture_dir()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = fixture.materialize_weights(dir.path()).unwrap();
    assert_eq!(written.conv_specs().count(), 16);
}

#[test]
fn input_tensor_matches_reference_preprocessing() {
    let fixture = GoldenFixture::open(fixture_dir()).unwrap();
    let manifest = fixture.committed_manifest().unwrap();
    let ours = to_input_tensor(&fixture.input_image().unwrap(), &manifest.normalization).unwrap();
    let theirs = fixture.input_tensor().unwrap();
    assert_eq!(ours.shape(), theirs.shape());
    let worst = ours
        .data()
        .iter()
        .zip(theirs.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(worst <= 1e-6, "max abs difference {worst}");
}

#[test]
fn activations_match_reference_within_1e3() {
    let run = run();
    let samples = run.fixture.activation_samples().unwrap();
    let errors = activation_errors(&run.maps, &samples, &run.fixture.meta.layers).unwrap();
    for (layer, err) in errors.iter().enumerate() {
        assert!(*err <= 1e-3, "layer {} max relative error {err}", layer + 1);
    }
}

#[test]
fn layer_maxima_and_sums_match_reference() {
    let run = run();
    for (map, meta) in run.maps.maps().iter().zip(&run.fixture.meta.layers) {
        let max = map.data().iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let sum: f64 = map.data().iter().map(|&v| v as f64).sum();
        assert!(
            (max - meta.max).abs() <= 1e-3 * meta.max.abs(),
            "layer {} max",
            meta.layer
        );
        assert!(
            (sum - meta.sum).abs() <= 1e-4 * meta.sum.abs(),
            "layer {} sum",
            meta.layer
        );
    }
}

#[test]
fn word_counts_match_reference_exactly() {
    let run = run();
    let ours = extract_lexicon(&run.maps, &run.fixture.meta.threshold);
    let theirs = run.fixture.counts().unwrap();
    assert_eq!(ours.len(), theirs.len());
    let mut mismatched = Vec::new();
    for (a, b) in ours.entries().zip(theirs.entries()) {
        assert_eq!((a.layer, a.kernel), (b.layer, b.kernel));
        if a.count != b.count {
            mismatched.push((a.layer, a.kernel, a.count, b.count));
        }
    }
    assert!(
        mismatched.is_empty(),
        "{} mismatches, first {:?}",
        mismatched.len(),
        mismatched.first()
    );
}
