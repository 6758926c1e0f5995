//! Turns feature maps into an image's "text": one word type per kernel,
//! with a word count equal to the number of that kernel's feature-map pixels
//! above a threshold.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PerturbationSpec;
use crate::net::{FeatureMapSet, Tap};
use crate::tensor::{nearest_rank, select_rank};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Threshold is the nearest-rank `level` quantile of the map.
    Quantile,
    /// Threshold is `level * max(map)`.
    RelativeMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub mode: ThresholdMode,
    pub level: f64,
    /// Count pixels `>=` the threshold instead of `>`.
    #[serde(default)]
    pub inclusive: bool,
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        ThresholdSpec {
            mode: ThresholdMode::Quantile,
            level: 0.9,
            inclusive: false,
        }
    }
}

impl ThresholdSpec {
    pub fn new(mode: ThresholdMode, level: f64) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Argument(format!(
                "threshold level {level} not in (0, 1)"
            )));
        }
        Ok(ThresholdSpec {
            mode,
            level,
            inclusive: false,
        })
    }

    pub fn inclusive(mut self, inclusive: bool) -> Self {
        self.inclusive = inclusive;
        self
    }
}

impl fmt::Display for ThresholdSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            ThresholdMode::Quantile => "quantile",
            ThresholdMode::RelativeMax => "relative_max",
        };
        write!(f, "{mode}:{}", self.level)
    }
}

/// Parses `MODE:LEVEL`, e.g. `quantile:0.9` or `relative_max:0.9`.
impl FromStr for ThresholdSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mode, level) = s
            .split_once(':')
            .ok_or_else(|| Error::Argument(format!("threshold {s:?} is not MODE:LEVEL")))?;
        let mode = match mode.trim() {
            "quantile" => ThresholdMode::Quantile,
            "relative_max" => ThresholdMode::RelativeMax,
            other => {
                return Err(Error::Argument(format!(
                    "unknown threshold mode {other:?} (quantile|relative_max)"
                )))
            }
        };
        let level: f64 = level
            .trim()
            .parse()
            .map_err(|_| Error::Argument(format!("threshold level {level:?} is not a number")))?;
        ThresholdSpec::new(mode, level)
    }
}

/// Number of pixels of one feature map above the threshold.
pub fn word_count(map: &[f32], t: &ThresholdSpec) -> u64 {
    if map.is_empty() {
        return 0;
    }
    let above = |threshold: f64| {
        map.iter()
            .filter(|&&v| {
                let v = f64::from(v);
                if t.inclusive {
                    v >= threshold
                } else {
                    v > threshold
                }
            })
            .count() as u64
    };
    match t.mode {
        ThresholdMode::Quantile => {
            let mut scratch = map.to_vec();
            let threshold = select_rank(&mut scratch, nearest_rank(t.level, map.len()));
            above(f64::from(threshold))
        }
        ThresholdMode::RelativeMax => {
            let max = map.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            if max <= 0.0 {
                0
            } else {
                above(t.level * f64::from(max))
            }
        }
    }
}

/// Where a table came from. Every field is optional because tables can be
/// read back from bare CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub image_id: Option<String>,
    pub threshold: Option<ThresholdSpec>,
    pub tap: Option<Tap>,
    pub perturbation: Option<PerturbationSpec>,
}

/// Word counts indexed by 1-based layer and 0-based kernel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WordCountTable {
    pub meta: TableMeta,
    layers: Vec<Vec<u64>>,
}

/// One row of the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WordEntry {
    pub layer: usize,
    pub kernel: usize,
    pub count: u64,
}

impl WordCountTable {
    pub fn from_layers(layers: Vec<Vec<u64>>, meta: TableMeta) -> Self {
        WordCountTable { meta, layers }
    }

    pub fn layers(&self) -> &[Vec<u64>] {
        &self.layers
    }

    /// Total number of (layer, kernel) rows.
    pub fn len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// 1-based layer, 0-based kernel.
    pub fn count(&self, layer: usize, kernel: usize) -> Option<u64> {
        layer
            .checked_sub(1)
            .and_then(|l| self.layers.get(l))
            .and_then(|ks| ks.get(kernel))
            .copied()
    }

    /// Rows in (layer, kernel) order.
    pub fn entries(&self) -> impl Iterator<Item = WordEntry> + '_ {
        self.layers.iter().enumerate().flat_map(|(l, ks)| {
            ks.iter().enumerate().map(move |(k, &count)| WordEntry {
                layer: l + 1,
                kernel: k,
                count,
            })
        })
    }

    /// Words that occur at least once, in (layer, kernel) order.
    pub fn nonzero(&self) -> Vec<WordEntry> {
        self.entries().filter(|e| e.count > 0).collect()
    }

    /// Sum of counts per layer.
    pub fn layer_totals(&self) -> Vec<u64> {
        self.layers.iter().map(|ks| ks.iter().sum()).collect()
    }

    pub fn total_tokens(&self) -> u64 {
        self.layer_totals().iter().sum()
    }

    /// `layer,kernel,count` with a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Parse {
            line: 0,
            message: e.to_string(),
        };
        w.write_record(["layer", "kernel", "count"])
            .map_err(csv_err)?;
        for e in self.entries() {
            w.write_record([
                e.layer.to_string(),
                e.kernel.to_string(),
                e.count.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Parse {
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing CSV to memory cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }

    /// Reads the CSV written by [`write_csv`](Self::write_csv). Rows must be
    /// ordered by layer (starting at 1, consecutive) and kernel (starting at
    /// 0 in each layer, consecutive).
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = reader.headers().map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if headers.iter().collect::<Vec<_>>() != ["layer", "kernel", "count"] {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header layer,kernel,count, found {headers:?}"),
            });
        }

        let mut layers: Vec<Vec<u64>> = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let parse_err = |message: String| Error::Parse { line, message };
            let field = |i: usize, name: &str| -> Result<u64> {
                let raw = record.get(i).unwrap_or_default();
                raw.parse::<u64>()
                    .map_err(|_| parse_err(format!("{name} {raw:?} is not a non-negative integer")))
            };
            let layer = field(0, "layer")? as usize;
            let kernel = field(1, "kernel")? as usize;
            let count = field(2, "count")?;

            if layer == layers.len() + 1 {
                layers.push(Vec::new());
            } else if layer != layers.len() || layer == 0 {
                return Err(parse_err(format!(
                    "layer {layer} out of sequence (current layer {})",
                    layers.len()
                )));
            }
            let current = layers.last_mut().expect("a layer was just ensured");
            if kernel != current.len() {
                return Err(parse_err(format!(
                    "kernel {kernel} out of sequence in layer {layer} (expected {})",
                    current.len()
                )));
            }
            current.push(count);
        }
        Ok(WordCountTable {
            meta: TableMeta::default(),
            layers,
        })
    }
}

/// Counts words for every kernel of every layer.
pub fn extract_lexicon(fms: &FeatureMapSet, t: &ThresholdSpec) -> WordCountTable {
    let layers = fms
        .maps()
        .iter()
        .map(|map| {
            (0..map.channels())
                .into_par_iter()
                .map(|k| word_count(map.channel(k), t))
                .collect()
        })
        .collect();
    WordCountTable {
        meta: TableMeta {
            image_id: None,
            threshold: Some(*t),
            tap: Some(fms.tap()),
            perturbation: None,
        },
        layers,
    }
}
