//! File formats: embedding datasets (JSONL / CSV), HSF tables, model
//! checkpoints, and the CSV/JSON reports written by the CLI.
//!
//! Every write goes through a temporary file in the destination directory
//! that is renamed into place, so readers never observe a partial file.
//! Floats are written in Rust's shortest round-trip form.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationParams;
use crate::curriculum::SweepTable;
use crate::data::dataset::{EmbeddingDataset, Example};
use crate::domain::selftrain::TrajectoryPoint;
use crate::error::{Error, Result};
use crate::geometry::ClassWeights;
use crate::metrics::ReliabilityBins;
use crate::model::{HiddenLayer, HypersphereModel};
use crate::scoring::{DifficultyRecord, DifficultyReport};
use crate::trainer::EpochRecord;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    /// Guesses from the file extension; anything but `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Format::Jsonl => "jsonl",
            Format::Csv => "csv",
        })
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(Error::invalid("format", format!("unknown format `{other}` (jsonl|csv)"))),
        }
    }
}

/// Writes `path` atomically: the content is produced into a sibling temp
/// file which then replaces `path`.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_atomic(path, |w| writeln!(w, "{text}"))
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    label: usize,
    features: Vec<f64>,
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Loads a dataset. The class count is inferred from the labels unless
/// given explicitly (needed when a split lacks the highest class).
pub fn load_embeddings(path: &Path, format: Format, classes: Option<usize>) -> Result<EmbeddingDataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let examples = match format {
        Format::Jsonl => read_jsonl(BufReader::new(file))?,
        Format::Csv => read_csv(file)?,
    };
    if examples.is_empty() {
        return Err(Error::Empty(format!("dataset {}", path.display())));
    }
    match classes {
        Some(c) => EmbeddingDataset::new(examples, c),
        None => EmbeddingDataset::from_examples(examples),
    }
}

fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| parse_err(line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: JsonRecord = serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        out.push(Example {
            id: r.id,
            label: r.label,
            features: r.features,
        });
    }
    Ok(out)
}

fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<Example>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.len() < 2 || &header[0] != "id" || &header[1] != "label" {
        return Err(parse_err(1, "header must start with `id,label`"));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() < 2 {
            return Err(parse_err(line, "expected id,label,features..."));
        }
        let label = row[1]
            .trim()
            .parse::<usize>()
            .map_err(|e| parse_err(line, format!("label `{}`: {e}", &row[1])))?;
        let features = row
            .iter()
            .skip(2)
            .map(|f| f.trim().parse::<f64>().map_err(|e| parse_err(line, format!("feature `{f}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(Example {
            id: row[0].to_string(),
            label,
            features,
        });
    }
    Ok(out)
}

pub fn save_embeddings(dataset: &EmbeddingDataset, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Jsonl => write_atomic(path, |w| {
            for e in dataset.examples() {
                let r = JsonRecord {
                    id: e.id.clone(),
                    label: e.label,
                    features: e.features.clone(),
                };
                serde_json::to_writer(&mut *w, &r)?;
                writeln!(w)?;
            }
            Ok(())
        }),
        Format::Csv => write_atomic(path, |w| {
            let mut c = csv::Writer::from_writer(w);
            let mut header = vec!["id".to_string(), "label".to_string()];
            header.extend((0..dataset.dim()).map(|j| format!("f{j}")));
            c.write_record(&header)?;
            for e in dataset.examples() {
                let mut row = vec![e.id.clone(), e.label.to_string()];
                row.extend(e.features.iter().map(|v| v.to_string()));
                c.write_record(&row)?;
            }
            c.flush()
        }),
    }
}

/// Reads an `id,hsf` table; values must lie in `[0, 1]` and ids be unique.
pub fn load_hsf(path: &Path) -> Result<BTreeMap<String, f64>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.len() != 2 || &header[0] != "id" || &header[1] != "hsf" {
        return Err(parse_err(1, "header must be `id,hsf`"));
    }
    let mut map = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let id = row[0].to_string();
        let value: f64 = row[1]
            .trim()
            .parse()
            .map_err(|e| parse_err(line, format!("hsf `{}`: {e}", &row[1])))?;
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::HsfOutOfRange { id, value });
        }
        if map.insert(id.clone(), value).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(map)
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub classes: usize,
    /// Dimension of the class directions (the hidden width when present).
    pub dim: usize,
    pub input_dim: usize,
    pub scale: f64,
    /// One row per class.
    pub weights: Vec<Vec<f64>>,
    #[serde(default)]
    pub hidden: Option<HiddenLayer>,
    #[serde(default)]
    pub calibration: Option<CalibrationParams>,
}

impl Checkpoint {
    pub fn new(model: &HypersphereModel, calibration: Option<&CalibrationParams>) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            classes: model.classes(),
            dim: model.weights.dim(),
            input_dim: model.input_dim(),
            scale: model.scale,
            weights: model.weights.columns().map(<[f64]>::to_vec).collect(),
            hidden: model.hidden.clone(),
            calibration: calibration.cloned(),
        }
    }

    pub fn into_model(self) -> Result<(HypersphereModel, Option<CalibrationParams>)> {
        let weights = ClassWeights::new(self.weights)?;
        if weights.classes() != self.classes || weights.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: weights.dim(),
            });
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid("scale", "must be > 0"));
        }
        if let Some(h) = &self.hidden {
            if h.width != self.dim || h.input_dim != self.input_dim || h.weights.len() != h.width * h.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim * self.input_dim,
                    found: h.weights.len(),
                });
            }
        } else if self.input_dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: self.input_dim,
            });
        }
        if let Some(c) = &self.calibration {
            c.validate()?;
            if let CalibrationParams::Classwise { scales } = c {
                if scales.len() != self.classes {
                    return Err(Error::LengthMismatch {
                        what: "class-wise scales",
                        expected: self.classes,
                        found: scales.len(),
                    });
                }
            }
        }
        let model = HypersphereModel {
            weights,
            scale: self.scale,
            hidden: self.hidden,
        };
        Ok((model, self.calibration))
    }
}

pub fn save_checkpoint(model: &HypersphereModel, calibration: Option<&CalibrationParams>, path: &Path) -> Result<()> {
    write_json(path, &Checkpoint::new(model, calibration))
}

/// Loads a checkpoint, rejecting unknown format versions and truncated or
/// inconsistent documents.
pub fn load_checkpoint(path: &Path) -> Result<(HypersphereModel, Option<CalibrationParams>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |message: String| Error::Malformed {
        path: path.to_path_buf(),
        message,
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| malformed("missing format_version".into()))?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(Error::VersionMismatch {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            supported: CHECKPOINT_VERSION,
        });
    }
    let ckpt: Checkpoint = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    ckpt.into_model()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

pub const REPORT_HEADER: [&str; 8] = ["id", "label", "raw_gap", "calibrated_gap", "avh", "confidence", "margin", "forgetting"];

pub fn write_report(report: &DifficultyReport, path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(REPORT_HEADER).map_err(csv_io)?;
        for r in &report.records {
            c.write_record([
                r.id.clone(),
                r.label.to_string(),
                r.raw_gap.to_string(),
                opt(r.calibrated_gap),
                r.avh.to_string(),
                r.confidence.to_string(),
                r.margin.to_string(),
                r.forgetting.map_or_else(String::new, |f| f.to_string()),
            ])
            .map_err(csv_io)?;
        }
        c.flush()
    })
}

/// Reads a report written by [`write_report`]. The predicted class is not
/// stored and comes back as the label when the raw gap is positive, else
/// `usize::MAX`.
pub fn read_report(path: &Path) -> Result<DifficultyReport> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.iter().ne(REPORT_HEADER) {
        return Err(parse_err(1, format!("header must be `{}`", REPORT_HEADER.join(","))));
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse()
                .map_err(|e| parse_err(line, format!("{} `{}`: {e}", REPORT_HEADER[i], &row[i])))
        };
        let optional = |i: usize| -> Result<Option<f64>> {
            if row[i].is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let label: usize = row[1].parse().map_err(|e| parse_err(line, format!("label: {e}")))?;
        let raw_gap = num(2)?;
        records.push(DifficultyRecord {
            id: row[0].to_string(),
            label,
            predicted: if raw_gap > 0.0 { label } else { usize::MAX },
            raw_gap,
            calibrated_gap: optional(3)?,
            avh: num(4)?,
            confidence: num(5)?,
            margin: num(6)?,
            forgetting: if row[7].is_empty() {
                None
            } else {
                Some(row[7].parse().map_err(|e| parse_err(line, format!("forgetting: {e}")))?)
            },
        });
    }
    Ok(DifficultyReport::new(records))
}

pub fn write_reliability_csv(bins: &ReliabilityBins, path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["bin_low", "bin_high", "mean_conf", "accuracy", "count"]).map_err(csv_io)?;
        for b in &bins.bins {
            c.write_record([
                b.low.to_string(),
                b.high.to_string(),
                b.mean_confidence.to_string(),
                b.accuracy.to_string(),
                b.count.to_string(),
            ])
            .map_err(csv_io)?;
        }
        c.flush()
    })
}

pub fn write_trajectory(points: &[TrajectoryPoint], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["epoch", "source_acc", "target_acc", "mmd", "mean_example_weight"])
            .map_err(csv_io)?;
        for p in points {
            c.write_record([
                p.epoch.to_string(),
                p.source_accuracy.to_string(),
                opt(p.target_accuracy),
                p.mmd.to_string(),
                opt(p.mean_example_weight),
            ])
            .map_err(csv_io)?;
        }
        c.flush()
    })
}

pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["epoch", "loss", "train_accuracy", "visible", "learning_rate"])
            .map_err(csv_io)?;
        for h in history {
            c.write_record([
                h.epoch.to_string(),
                h.loss.to_string(),
                h.train_accuracy.to_string(),
                h.visible.to_string(),
                h.learning_rate.to_string(),
            ])
            .map_err(csv_io)?;
        }
        c.flush()
    })
}

/// Per-run sweep log: `a,b,seed,final_accuracy` (empty accuracy for a
/// failed run).
pub fn write_sweep_runs(table: &SweepTable, path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["a", "b", "seed", "final_accuracy"]).map_err(csv_io)?;
        for r in &table.runs {
            c.write_record([r.a.to_string(), r.b.to_string(), r.seed.to_string(), opt(r.final_accuracy)])
                .map_err(csv_io)?;
        }
        c.flush()
    })
}

pub fn write_sweep_medians(table: &SweepTable, path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["a", "b", "median_accuracy", "completed"]).map_err(csv_io)?;
        for cell in &table.cells {
            c.write_record([
                cell.a.to_string(),
                cell.b.to_string(),
                opt(cell.median_accuracy),
                cell.completed.to_string(),
            ])
            .map_err(csv_io)?;
        }
        c.flush()
    })
}

/// Wide heat-map of cell medians: one row per `a`, one column per `b`, both
/// ascending. Cells without a completed run are left empty.
pub fn write_sweep_heatmap(table: &SweepTable, path: &Path) -> Result<()> {
    let mut a: Vec<f64> = table.cells.iter().map(|c| c.a).collect();
    let mut b: Vec<f64> = table.cells.iter().map(|c| c.b).collect();
    for v in [&mut a, &mut b] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    write_atomic(path, |w| {
        let mut c = csv::Writer::from_writer(w);
        let header = std::iter::once("a\\b".to_string()).chain(b.iter().map(f64::to_string));
        c.write_record(header).map_err(csv_io)?;
        for &ai in &a {
            let row = std::iter::once(ai.to_string())
                .chain(b.iter().map(|&bj| opt(table.cell(ai, bj).and_then(|x| x.median_accuracy))));
            c.write_record(row).map_err(csv_io)?;
        }
        c.flush()
    })
}

pub fn read_sweep_runs(path: &Path) -> Result<SweepTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut runs = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |what: &str| parse_err(line, format!("bad {what}"));
        if row.len() != 4 {
            return Err(parse_err(line, "expected a,b,seed,final_accuracy"));
        }
        let acc = if row[3].is_empty() {
            None
        } else {
            Some(row[3].parse().map_err(|_| bad("final_accuracy"))?)
        };
        runs.push(crate::curriculum::SweepRun {
            a: row[0].parse().map_err(|_| bad("a"))?,
            b: row[1].parse().map_err(|_| bad("b"))?,
            seed: row[2].parse().map_err(|_| bad("seed"))?,
            final_accuracy: acc,
            error: acc.is_none().then(|| "run failed".to_string()),
        });
    }
    Ok(SweepTable::from_runs(runs))
}
