//! `lexivis analyze | sweep | fit | synth-weights`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lexivis_core::report::{sanitize_id, write_report_files};
use lexivis_core::weights::write_synthetic_vgg19;
use lexivis_core::{
    analyze_roi, center_roi, crop_roi, fit_table, load_manifest, run_sweep, AnalysisConfig,
    ImageBuffer, LawReport, PerturbationKind, RoiSpec, Tap, ThresholdSpec, Vgg19, WordCountTable,
};

#[derive(Debug, Parser)]
#[command(
    name = "lexivis",
    version,
    about = "Statistical-linguistics laws in CNN feature maps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyze one or more images end to end.
    Analyze(AnalyzeArgs),
    /// Analyze images under a grid of perturbation levels.
    Sweep(SweepArgs),
    /// Fit the laws to an existing `layer,kernel,count` CSV.
    Fit(FitArgs),
    /// Write a deterministic synthetic VGG-19 weight bundle (for smoke tests;
    /// not a trained model).
    SynthWeights(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TapArg {
    Post,
    Pre,
}

impl From<TapArg> for Tap {
    fn from(t: TapArg) -> Self {
        match t {
            TapArg::Post => Tap::PostRelu,
            TapArg::Pre => Tap::PreRelu,
        }
    }
}

#[derive(Debug, Args)]
pub struct NetworkArgs {
    /// Path to the weight manifest (manifest.json).
    #[arg(long)]
    pub weights: PathBuf,

    /// Input image (PNG or JPEG); repeat for several images.
    #[arg(long = "image", required = true)]
    pub images: Vec<PathBuf>,

    /// Top-left corner of a 224x224 ROI as X,Y; repeat for several ROIs.
    /// Without it the short side is scaled to 224 and the centre is cropped.
    #[arg(long = "roi", value_parser = parse_roi)]
    pub rois: Vec<(usize, usize)>,

    /// Word threshold as MODE:LEVEL (quantile or relative_max).
    #[arg(long, default_value = "quantile:0.9")]
    pub threshold: ThresholdSpec,

    /// Count pixels >= the threshold instead of strictly above it.
    #[arg(long)]
    pub inclusive: bool,

    /// Capture feature maps before or after each conv's ReLU.
    #[arg(long, value_enum, default_value_t = TapArg::Post)]
    pub tap: TapArg,

    #[arg(long = "heaps-iters", default_value_t = 100)]
    pub heaps_iters: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,

    #[arg(long, default_value = "out")]
    pub out: PathBuf,

    /// Also save every (perturbed) ROI as PNG.
    #[arg(long)]
    pub dump_rois: bool,
}

impl NetworkArgs {
    fn config(&self) -> AnalysisConfig {
        AnalysisConfig {
            threshold: self.threshold.inclusive(self.inclusive),
            tap: self.tap.into(),
            heaps_iterations: self.heaps_iters,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub net: NetworkArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub net: NetworkArgs,

    /// saltpepper | gaussian | erode | dilate
    #[arg(long)]
    pub perturb: PerturbationKind,

    /// Comma-separated levels; the identity level is always added.
    #[arg(long, value_delimiter = ',')]
    pub levels: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Word-count CSV with header `layer,kernel,count`.
    pub counts: PathBuf,

    /// Image id used in output names; defaults to the CSV file stem.
    #[arg(long)]
    pub id: Option<String>,

    #[arg(long = "heaps-iters", default_value_t = 100)]
    pub heaps_iters: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output directory; receives manifest.json and the blobs.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_roi(s: &str) -> Result<(usize, usize), String> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| format!("ROI {s:?} is not X,Y"))?;
    let num = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("ROI coordinate {v:?} is not a non-negative integer"))
    };
    Ok((num(x)?, num(y)?))
}

/// Result of a command that ran to completion. Inputs that failed are
/// listed in `failures`.
#[derive(Debug, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub failures: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        u8::from(!self.failures.is_empty())
    }
}

/// Runs a parsed command. `Err` is a fatal error (exit code 2); partial
/// failures come back inside the [`Outcome`] (exit code 1).
pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Analyze(args) => with_jobs(args.net.jobs, || cmd_analyze(&args)),
        Command::Sweep(args) => with_jobs(args.net.jobs, || cmd_sweep(&args)),
        Command::Fit(args) => cmd_fit(&args),
        Command::SynthWeights(args) => cmd_synth_weights(&args),
    }
}

fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")?;
    pool.install(f)
}

fn load_network(path: &Path) -> Result<Vgg19> {
    let manifest =
        load_manifest(path).with_context(|| format!("loading weights {}", path.display()))?;
    Vgg19::from_manifest(&manifest).with_context(|| format!("loading weights {}", path.display()))
}

/// One network input: an id, the source path, how it was cropped.
struct RoiInput {
    id: String,
    source: PathBuf,
    roi: RoiSpec,
    pixels: ImageBuffer,
    decode_ms: f64,
}

fn load_rois(args: &NetworkArgs, failures: &mut Vec<String>) -> Vec<RoiInput> {
    let mut out = Vec::new();
    for path in &args.images {
        let t = Instant::now();
        let img = match ImageBuffer::open(path) {
            Ok(img) => img,
            Err(e) => {
                failures.push(format!("decode {}: {e}", path.display()));
                continue;
            }
        };
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        let specs: Vec<RoiSpec> = if args.rois.is_empty() {
            vec![RoiSpec::Center]
        } else {
            args.rois
                .iter()
                .map(|&(x, y)| RoiSpec::At { x, y })
                .collect()
        };
        for roi in specs {
            let (id, pixels) = match roi {
                RoiSpec::Center => (stem.clone(), center_roi(&img)),
                RoiSpec::At { x, y } => (format!("{stem}_roi{x}_{y}"), crop_roi(&img, x, y)),
            };
            match pixels {
                Ok(pixels) => out.push(RoiInput {
                    id,
                    source: path.clone(),
                    roi,
                    pixels,
                    decode_ms: t.elapsed().as_secs_f64() * 1e3,
                }),
                Err(e) => failures.push(format!("roi {} of {}: {e}", id, path.display())),
            }
        }
    }
    out
}

fn finish_report(report: &mut LawReport, input: &RoiInput) {
    report.source = Some(input.source.display().to_string());
    report.roi = Some(input.roi);
    if let Some(t) = report.timings_ms.as_mut() {
        t.decode_ms = input.decode_ms;
    }
}

fn print_summary(report: &LawReport) {
    let r2 = |v: Option<f64>| v.map_or_else(|| "degenerate".to_string(), |x| format!("{x:.4}"));
    println!(
        "{}: zipf R²={} heaps R²={} benford R²={}",
        report.image_id,
        r2(report.zipf_r2()),
        r2(report.heaps_r2()),
        r2(report.benford_r2())
    );
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<Outcome> {
    let net = load_network(&args.net.weights)?;
    let config = args.net.config();
    let mut outcome = Outcome::default();
    let inputs = load_rois(&args.net, &mut outcome.failures);
    fs::create_dir_all(&args.net.out)
        .with_context(|| format!("creating {}", args.net.out.display()))?;

    for input in &inputs {
        let result = analyze_roi(&net, &input.pixels, &input.id, None, &config)
            .map_err(anyhow::Error::from)
            .and_then(|(mut report, table)| {
                finish_report(&mut report, input);
                if args.net.dump_rois {
                    let path = args
                        .net
                        .out
                        .join(format!("roi_{}.png", sanitize_id(&input.id)));
                    input.pixels.save_png(&path)?;
                    outcome.written.push(path);
                }
                let files = write_report_files(&args.net.out, &report, Some(&table))?;
                print_summary(&report);
                Ok(files)
            });
        match result {
            Ok(files) => outcome.written.extend(files),
            Err(e) => outcome.failures.push(format!(
                "analyze {} ({}): {e:#}",
                input.id,
                input.source.display()
            )),
        }
    }
    Ok(outcome)
}

fn level_dir(out: &Path, kind: PerturbationKind, level: f64) -> PathBuf {
    out.join(format!("{kind}_{level}"))
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Outcome> {
    let net = load_network(&args.net.weights)?;
    let config = args.net.config();
    let mut outcome = Outcome::default();
    let inputs = load_rois(&args.net, &mut outcome.failures);
    if inputs.is_empty() {
        bail!("no usable images: {}", outcome.failures.join("; "));
    }
    let levels = if args.levels.is_empty() {
        args.perturb.default_levels()
    } else {
        args.levels.clone()
    };
    let out = &args.net.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let images: Vec<(String, ImageBuffer)> = inputs
        .iter()
        .map(|i| (i.id.clone(), i.pixels.clone()))
        .collect();
    let written = Mutex::new(Vec::new());
    let result = run_sweep(&net, &images, args.perturb, &levels, &config, |cell| {
        let input = inputs
            .iter()
            .find(|i| i.id == cell.report.image_id)
            .expect("sweep cells come from the given inputs");
        let mut report = cell.report.clone();
        finish_report(&mut report, input);
        let dir = level_dir(out, args.perturb, cell.level);
        if args.net.dump_rois {
            fs::create_dir_all(&dir).map_err(|e| lexivis_core::Error::Io {
                path: dir.clone(),
                source: e,
            })?;
            let spec = report
                .perturbation
                .expect("sweep reports carry their perturbation");
            let path = dir.join(format!("roi_{}.png", sanitize_id(&report.image_id)));
            spec.apply(&input.pixels)?.save_png(&path)?;
            written.lock().expect("writer lock").push(path);
        }
        let files = write_report_files(&dir, &report, Some(&cell.table))?;
        written.lock().expect("writer lock").extend(files);
        Ok(())
    })?;

    outcome.written = written.into_inner().expect("writer lock");
    for f in &result.failures {
        outcome
            .failures
            .push(format!("sweep {} at {}: {}", f.image_id, f.level, f.error));
    }
    let summary = out.join("sweep_summary.csv");
    fs::write(&summary, result.summary_csv())
        .with_context(|| format!("writing {}", summary.display()))?;
    let json = out.join("sweep.json");
    fs::write(&json, serde_json::to_string_pretty(&result)? + "\n")
        .with_context(|| format!("writing {}", json.display()))?;
    outcome.written.extend([summary, json]);

    for s in &result.summary {
        let r2 = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{} {}: median R² zipf={} heaps={} benford={} ({} images)",
            args.perturb,
            s.level,
            r2(s.zipf_median_r2),
            r2(s.heaps_median_r2),
            r2(s.benford_median_r2),
            s.images
        );
    }
    if let Some(rho) = result.trend.benford_spearman {
        println!("benford Spearman rho vs level: {rho:.3}");
    }
    Ok(outcome)
}

/// Reads a counts CSV and fits the three laws. Fit-only reports carry no
/// timings, so identical inputs give byte-identical files.
pub fn fit_counts_file(
    path: &Path,
    id: &str,
    heaps_iters: usize,
    seed: u64,
) -> Result<(LawReport, WordCountTable)> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let table =
        WordCountTable::read_csv(file).with_context(|| format!("reading {}", path.display()))?;
    let report = fit_table(&table, id, heaps_iters, seed)?;
    Ok((report, table))
}

pub fn cmd_fit(args: &FitArgs) -> Result<Outcome> {
    let id = match &args.id {
        Some(id) => id.clone(),
        None => args
            .counts
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| anyhow!("cannot derive an id from {}", args.counts.display()))?,
    };
    let (report, _) = fit_counts_file(&args.counts, &id, args.heaps_iters, args.seed)?;
    let written = write_report_files(&args.out, &report, None)?;
    print_summary(&report);
    Ok(Outcome {
        written,
        failures: Vec::new(),
    })
}

pub fn cmd_synth_weights(args: &SynthArgs) -> Result<Outcome> {
    let manifest = write_synthetic_vgg19(&args.out, args.seed)
        .with_context(|| format!("writing weights to {}", args.out.display()))?;
    let path = manifest.base_dir().join("manifest.json");
    println!("{} (digest {})", path.display(), manifest.digest());
    Ok(Outcome {
        written: vec![path],
        failures: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roi_parsing() {
        assert_eq!(parse_roi("10,20"), Ok((10, 20)));
        assert_eq!(parse_roi(" 3 , 4"), Ok((3, 4)));
        assert!(parse_roi("10").is_err());
        assert!(parse_roi("-1,2").is_err());
    }

    #[test]
    fn cli_parses_all_flags() {
        let cli = Cli::try_parse_from([
            "lexivis",
            "sweep",
            "--weights",
            "w/manifest.json",
            "--image",
            "a.png",
            "--image",
            "b.jpg",
            "--roi",
            "0,0",
            "--threshold",
            "relative_max:0.9",
            "--heaps-iters",
            "7",
            "--seed",
            "5",
            "--perturb",
            "saltpepper",
            "--levels",
            "0.1,0.3",
            "--jobs",
            "2",
            "--out",
            "o",
            "--tap",
            "pre",
            "--inclusive",
        ])
        .unwrap();
        let Command::Sweep(args) = cli.command else {
            panic!("expected sweep");
        };
        assert_eq!(args.net.images.len(), 2);
        assert_eq!(args.levels, vec![0.1, 0.3]);
        assert_eq!(args.perturb, PerturbationKind::Saltpepper);
        let config = args.net.config();
        assert_eq!(config.threshold.to_string(), "relative_max:0.9");
        assert!(config.threshold.inclusive);
        assert_eq!(config.tap, Tap::PreRelu);
        assert_eq!(config.heaps_iterations, 7);
    }

    #[test]
    fn bad_threshold_is_a_usage_error() {
        let err = Cli::try_parse_from([
            "lexivis",
            "analyze",
            "--weights",
            "m.json",
            "--image",
            "a.png",
            "--threshold",
            "mean:2",
        ])
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
