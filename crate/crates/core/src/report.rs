//! End-to-end analysis of one ROI, robustness sweeps, and the JSON/CSV
//! artifacts they produce.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{to_input_tensor, ImageBuffer, PerturbationKind, PerturbationSpec};
use crate::laws::{
    benford_analysis, heaps_analysis, heaps_sub_seed, spearman, zipf_analysis, BenfordResult,
    HeapsResult, ZipfResult, DEFAULT_HEAPS_ITERATIONS,
};
use crate::lexicon::{extract_lexicon, ThresholdSpec, WordCountTable};
use crate::net::{Tap, Vgg19};

pub const SCHEMA_VERSION: u32 = 1;
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Knobs shared by every analysis in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub threshold: ThresholdSpec,
    pub tap: Tap,
    pub heaps_iterations: usize,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            threshold: ThresholdSpec::default(),
            tap: Tap::PostRelu,
            heaps_iterations: DEFAULT_HEAPS_ITERATIONS,
            seed: 0,
        }
    }
}

/// A law's fit, or the reason it could not be fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LawOutcome<T> {
    Ok(T),
    Degenerate { reason: String },
}

impl<T> LawOutcome<T> {
    fn from_result(r: Result<T>) -> Result<Self> {
        match r {
            Ok(v) => Ok(LawOutcome::Ok(v)),
            Err(Error::Degenerate(reason)) => Ok(LawOutcome::Degenerate { reason }),
            Err(e) => Err(e),
        }
    }

    pub fn ok(&self) -> Option<&T> {
        match self {
            LawOutcome::Ok(v) => Some(v),
            LawOutcome::Degenerate { .. } => None,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, LawOutcome::Degenerate { .. })
    }
}

/// How the 224x224 input was obtained from the source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum RoiSpec {
    /// Short side scaled to 224, then centre-cropped.
    Center,
    /// Exact crop with top-left corner `(x, y)`.
    At { x: usize, y: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub decode_ms: f64,
    pub preprocess_ms: f64,
    pub forward_ms: f64,
    pub lexicon_ms: f64,
    pub fit_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawReport {
    pub schema_version: u32,
    pub engine_version: String,
    pub image_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roi: Option<RoiSpec>,
    pub threshold: Option<ThresholdSpec>,
    pub tap: Option<Tap>,
    pub perturbation: Option<PerturbationSpec>,
    pub weights_digest: Option<String>,
    pub heaps_seed: u64,
    pub kernels: usize,
    pub nonzero_kernels: usize,
    pub tokens: u64,
    pub zipf: LawOutcome<ZipfResult>,
    pub heaps: LawOutcome<HeapsResult>,
    pub benford: LawOutcome<BenfordResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<StageTimings>,
}

impl LawReport {
    pub fn zipf_r2(&self) -> Option<f64> {
        self.zipf.ok().map(|z| z.fit.r_square)
    }

    pub fn heaps_r2(&self) -> Option<f64> {
        self.heaps.ok().map(|h| h.fit.r_square)
    }

    pub fn benford_r2(&self) -> Option<f64> {
        self.benford.ok().map(|b| b.r_square)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Fits all three laws to a table. Degenerate data becomes a per-law marker;
/// any other failure is an error.
pub fn fit_table(
    table: &WordCountTable,
    image_id: &str,
    heaps_iterations: usize,
    seed: u64,
) -> Result<LawReport> {
    Ok(LawReport {
        schema_version: SCHEMA_VERSION,
        engine_version: ENGINE_VERSION.into(),
        image_id: image_id.into(),
        source: None,
        roi: None,
        threshold: table.meta.threshold,
        tap: table.meta.tap,
        perturbation: table.meta.perturbation,
        weights_digest: None,
        heaps_seed: seed,
        kernels: table.len(),
        nonzero_kernels: table.nonzero().len(),
        tokens: table.total_tokens(),
        zipf: LawOutcome::from_result(zipf_analysis(table))?,
        heaps: LawOutcome::from_result(heaps_analysis(table, heaps_iterations, seed))?,
        benford: LawOutcome::from_result(benford_analysis(table))?,
        timings_ms: None,
    })
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs preprocessing, the forward pass, word counting and fitting on one
/// 224x224 ROI. `perturbation` is applied to the 8-bit ROI first.
pub fn analyze_roi(
    net: &Vgg19,
    roi: &ImageBuffer,
    image_id: &str,
    perturbation: Option<PerturbationSpec>,
    config: &AnalysisConfig,
) -> Result<(LawReport, WordCountTable)> {
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let roi = match &perturbation {
        Some(p) => p.apply(roi)?,
        None => roi.clone(),
    };
    let input = to_input_tensor(&roi, net.normalization())?;
    timings.preprocess_ms = ms_since(t);

    let t = Instant::now();
    let maps = net.forward_collect(&input, config.tap)?;
    timings.forward_ms = ms_since(t);

    let t = Instant::now();
    let mut table = extract_lexicon(&maps, &config.threshold);
    drop(maps);
    table.meta.image_id = Some(image_id.into());
    table.meta.perturbation = perturbation;
    timings.lexicon_ms = ms_since(t);

    let t = Instant::now();
    let mut report = fit_table(&table, image_id, config.heaps_iterations, config.seed)?;
    timings.fit_ms = ms_since(t);

    report.weights_digest = Some(net.digest().into());
    report.timings_ms = Some(timings);
    Ok((report, table))
}

/// File-name-safe form of an image id.
pub fn sanitize_id(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() {
        "image".into()
    } else {
        s
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn zipf_csv(z: &ZipfResult) -> String {
    let mut s = String::from("rank,count\n");
    for (i, c) in z.ranked_counts.iter().enumerate() {
        let _ = writeln!(s, "{},{c}", i + 1);
    }
    s
}

pub fn heaps_csv(h: &HeapsResult) -> String {
    let mut s = String::from("n,V\n");
    for p in &h.curve {
        let _ = writeln!(s, "{},{}", p.tokens, p.types);
    }
    s
}

pub fn benford_csv(b: &BenfordResult) -> String {
    let mut s = String::from("position,observed,expected\n");
    for (i, (o, e)) in b.observed.iter().zip(&b.expected).enumerate() {
        let _ = writeln!(s, "{},{o},{e}", i + 1);
    }
    s
}

/// Writes `report_<id>.json` plus the plot series for every law that was
/// fitted, and `counts_<id>.csv` when a table is given. Returns the written
/// paths.
pub fn write_report_files(
    dir: &Path,
    report: &LawReport,
    table: Option<&WordCountTable>,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let id = sanitize_id(&report.image_id);
    let mut written = Vec::new();
    let mut emit = |name: String, contents: String| -> Result<()> {
        let path = dir.join(name);
        write_file(&path, &contents)?;
        written.push(path);
        Ok(())
    };
    emit(format!("report_{id}.json"), report.to_json()?)?;
    if let Some(z) = report.zipf.ok() {
        emit(format!("zipf_{id}.csv"), zipf_csv(z))?;
    }
    if let Some(h) = report.heaps.ok() {
        emit(format!("heaps_{id}.csv"), heaps_csv(h))?;
    }
    if let Some(b) = report.benford.ok() {
        emit(format!("benford_{id}.csv"), benford_csv(b))?;
    }
    if let Some(t) = table {
        emit(format!("counts_{id}.csv"), t.to_csv_string())?;
    }
    Ok(written)
}

/// R² of the three laws for one (image, level) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub image_id: String,
    pub level: f64,
    pub zipf_r2: Option<f64>,
    pub heaps_r2: Option<f64>,
    pub benford_r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub level: f64,
    pub images: usize,
    pub zipf_median_r2: Option<f64>,
    pub heaps_median_r2: Option<f64>,
    pub benford_median_r2: Option<f64>,
}

/// Spearman correlation between level and median R², per law.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTrend {
    pub zipf_spearman: Option<f64>,
    pub heaps_spearman: Option<f64>,
    pub benford_spearman: Option<f64>,
    /// True when the Benford median R² tends to fall as the level grows.
    pub benford_non_increasing: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub image_id: String,
    pub level: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema_version: u32,
    pub kind: PerturbationKind,
    /// Ascending, always starting with the identity level.
    pub levels: Vec<f64>,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
    pub trend: SweepTrend,
    pub failures: Vec<SweepFailure>,
}

impl SweepResult {
    pub fn summary_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s =
            String::from("kind,level,images,zipf_median_r2,heaps_median_r2,benford_median_r2\n");
        for row in &self.summary {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                self.kind,
                row.level,
                row.images,
                opt(row.zipf_median_r2),
                opt(row.heaps_median_r2),
                opt(row.benford_median_r2)
            );
        }
        s
    }
}

/// Sorted, de-duplicated levels with the identity level first.
pub fn sweep_levels(kind: PerturbationKind, levels: &[f64]) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = levels.to_vec();
    out.push(kind.identity_level());
    for &l in &out {
        PerturbationSpec::new(kind, l, 0)?;
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// One finished sweep cell, handed to the caller for writing.
pub struct SweepCell {
    pub level: f64,
    pub report: LawReport,
    pub table: WordCountTable,
}

/// Analyzes every (image, level) pair. Noise seeds are derived from
/// `config.seed`, the image index and the level index. Cells run in parallel
/// on the current rayon pool; `on_cell` sees each finished cell.
pub fn run_sweep<F>(
    net: &Vgg19,
    images: &[(String, ImageBuffer)],
    kind: PerturbationKind,
    levels: &[f64],
    config: &AnalysisConfig,
    on_cell: F,
) -> Result<SweepResult>
where
    F: Fn(&SweepCell) -> Result<()> + Sync,
{
    let levels = sweep_levels(kind, levels)?;
    let cells: Vec<(usize, usize)> = (0..images.len())
        .flat_map(|i| (0..levels.len()).map(move |l| (i, l)))
        .collect();

    let outcomes: Vec<std::result::Result<SweepRow, SweepFailure>> = cells
        .par_iter()
        .map(|&(i, l)| {
            let (id, roi) = &images[i];
            let level = levels[l];
            let noise_seed = heaps_sub_seed(config.seed ^ ((i as u64) << 32), l);
            let run = || -> Result<SweepRow> {
                let spec = PerturbationSpec::new(kind, level, noise_seed)?;
                let (report, table) = analyze_roi(net, roi, id, Some(spec), config)?;
                let row = SweepRow {
                    image_id: id.clone(),
                    level,
                    zipf_r2: report.zipf_r2(),
                    heaps_r2: report.heaps_r2(),
                    benford_r2: report.benford_r2(),
                };
                on_cell(&SweepCell {
                    level,
                    report,
                    table,
                })?;
                Ok(row)
            };
            run().map_err(|e| SweepFailure {
                image_id: id.clone(),
                level,
                error: e.to_string(),
            })
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(f) => failures.push(f),
        }
    }

    let summary: Vec<SweepSummary> = levels
        .iter()
        .map(|&level| {
            let at: Vec<&SweepRow> = rows.iter().filter(|r| r.level == level).collect();
            let pick =
                |f: fn(&SweepRow) -> Option<f64>| median(at.iter().filter_map(|r| f(r)).collect());
            SweepSummary {
                level,
                images: at.len(),
                zipf_median_r2: pick(|r| r.zipf_r2),
                heaps_median_r2: pick(|r| r.heaps_r2),
                benford_median_r2: pick(|r| r.benford_r2),
            }
        })
        .collect();

    let trend_of = |f: fn(&SweepSummary) -> Option<f64>| {
        let (x, y): (Vec<f64>, Vec<f64>) = summary
            .iter()
            .filter_map(|s| f(s).map(|v| (s.level, v)))
            .unzip();
        spearman(&x, &y)
    };
    let benford_spearman = trend_of(|s| s.benford_median_r2);
    let trend = SweepTrend {
        zipf_spearman: trend_of(|s| s.zipf_median_r2),
        heaps_spearman: trend_of(|s| s.heaps_median_r2),
        benford_spearman,
        benford_non_increasing: benford_spearman.map(|rho| rho < 0.0),
    };

    Ok(SweepResult {
        schema_version: SCHEMA_VERSION,
        kind,
        levels,
        rows,
        summary,
        trend,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::TableMeta;

    #[test]
    fn degenerate_markers_for_tiny_tables() {
        let table = WordCountTable::from_layers(vec![vec![4, 0, 9]], TableMeta::default());
        let r = fit_table(&table, "tiny", 10, 1).unwrap();
        assert!(r.zipf.is_degenerate());
        assert!(r.heaps.is_degenerate());
        assert!(r.benford.is_degenerate());
        let json = r.to_json().unwrap();
        assert!(json.contains("\"status\": \"degenerate\""));
        assert!(!json.contains("timings_ms"));
    }

    #[test]
    fn report_round_trips_through_json() {
        let layers: Vec<Vec<u64>> = (1..=16u64)
            .map(|l| (1..=8).map(|k| l * 40 / k).collect())
            .collect();
        let table = WordCountTable::from_layers(layers, TableMeta::default());
        let r = fit_table(&table, "synthetic", 10, 5).unwrap();
        assert!(r.zipf.ok().is_some() && r.heaps.ok().is_some() && r.benford.ok().is_some());
        let back: LawReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        // the Heaps curve is not serialized
        assert_eq!(back.zipf, r.zipf);
        assert_eq!(back.benford, r.benford);
        assert_eq!(back.heaps.ok().unwrap().beta, r.heaps.ok().unwrap().beta);
    }

    #[test]
    fn levels_include_identity() {
        assert_eq!(
            sweep_levels(PerturbationKind::Saltpepper, &[0.3, 0.1]).unwrap(),
            vec![0.0, 0.1, 0.3]
        );
        assert_eq!(
            sweep_levels(PerturbationKind::Erode, &[5.0, 3.0, 1.0]).unwrap(),
            vec![1.0, 3.0, 5.0]
        );
        assert!(sweep_levels(PerturbationKind::Gaussian, &[4.0]).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median(vec![]), None);
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn ids_are_file_safe() {
        assert_eq!(sanitize_id("cat photo/1.png"), "cat_photo_1.png");
        assert_eq!(sanitize_id(""), "image");
    }
}
