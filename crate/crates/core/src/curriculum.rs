//! Linear pacing for paced data loading, sigmoid example weighting, ordering
//! by difficulty, and grid sweeps over pacing parameters.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{self, Stream};
use crate::scoring::{DifficultyRecord, DifficultyReport};

/// Pacing parameters `a` used by the reference grid.
pub const PACING_A_GRID: [f64; 6] = [0.01, 0.2, 0.4, 0.6, 0.8, 1.0];
/// Pacing parameters `b` used by the reference grid.
pub const PACING_B_GRID: [f64; 5] = [0.0, 0.2, 0.4, 0.6, 0.8];
/// Symmetric search space for the sigmoid slope endpoints in adaptation runs.
pub const SLOPE_SEARCH_SPACE: [f64; 11] = [-32.0, -16.0, -8.0, -4.0, -2.0, -1.0, 2.0, 4.0, 8.0, 16.0, 32.0];

/// `g(t) = N b + N (1 - b) t / (a T)`, rounded up and clamped to `[1, N]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacingFunction {
    pub a: f64,
    pub b: f64,
    pub n: usize,
    pub total: f64,
}

impl PacingFunction {
    pub fn new(a: f64, b: f64, n: usize, total: f64) -> Result<Self> {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::invalid("a", format!("{a} not in (0, 1]")));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::invalid("b", format!("{b} not in [0, 1]")));
        }
        if n == 0 {
            return Err(Error::invalid("n", "dataset size must be positive"));
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::invalid("total", format!("{total} must be > 0")));
        }
        Ok(Self { a, b, n, total })
    }

    /// Number of easiest examples visible at iteration `t`.
    pub fn size_at(&self, t: f64) -> usize {
        let n = self.n as f64;
        if t >= self.a * self.total {
            return self.n;
        }
        let g = n * self.b + n * (1.0 - self.b) * t / (self.a * self.total);
        (g.ceil() as usize).clamp(1, self.n)
    }
}

pub fn pace_size(p: &PacingFunction, t: f64) -> usize {
    p.size_at(t)
}

/// Numerically symmetric logistic: `sigmoid(-x) == 1 - sigmoid(x)` to
/// rounding.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid example weighting `sigmoid(lambda(t) * difficulty)` with a slope
/// moving linearly from `start` to `end` over `total` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidWeighting {
    pub start: f64,
    pub end: f64,
    pub total: f64,
}

impl SigmoidWeighting {
    pub fn new(start: f64, end: f64, total: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) {
            return Err(Error::invalid("slope", "endpoints must be finite"));
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::invalid("total", format!("{total} must be > 0")));
        }
        Ok(Self { start, end, total })
    }

    pub fn constant(slope: f64) -> Self {
        Self {
            start: slope,
            end: slope,
            total: 1.0,
        }
    }

    pub fn slope(&self, t: f64) -> f64 {
        if t <= 0.0 {
            self.start
        } else if t >= self.total {
            self.end
        } else {
            self.start + (self.end - self.start) * (t / self.total)
        }
    }

    pub fn weight(&self, t: f64, difficulty: f64) -> f64 {
        sigmoid(self.slope(t) * difficulty)
    }
}

pub fn example_weight(w: &SigmoidWeighting, t: f64, difficulty: f64) -> f64 {
    w.weight(t, difficulty)
}

/// A per-example difficulty measure and its orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    AngularGap,
    CalibratedGap,
    Avh,
    Confidence,
    Margin,
    Forgetting,
}

impl Measure {
    pub const ALL: [Measure; 6] = [
        Measure::AngularGap,
        Measure::CalibratedGap,
        Measure::Avh,
        Measure::Confidence,
        Measure::Margin,
        Measure::Forgetting,
    ];

    /// Higher values mean easier examples.
    pub fn is_easiness(self) -> bool {
        matches!(self, Measure::AngularGap | Measure::CalibratedGap | Measure::Confidence | Measure::Margin)
    }

    pub fn value(self, r: &DifficultyRecord) -> Option<f64> {
        match self {
            Measure::AngularGap => Some(r.raw_gap),
            Measure::CalibratedGap => r.calibrated_gap,
            Measure::Avh => Some(r.avh),
            Measure::Confidence => Some(r.confidence),
            Measure::Margin => Some(r.margin),
            Measure::Forgetting => r.forgetting.map(f64::from),
        }
    }

    /// The value oriented so that higher means easier.
    pub fn easiness(self, r: &DifficultyRecord) -> Option<f64> {
        self.value(r).map(|v| if self.is_easiness() { v } else { -v })
    }

    pub fn name(self) -> &'static str {
        match self {
            Measure::AngularGap => "angular_gap",
            Measure::CalibratedGap => "calibrated_gap",
            Measure::Avh => "avh",
            Measure::Confidence => "confidence",
            Measure::Margin => "margin",
            Measure::Forgetting => "forgetting",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name() == s || (s == "gap" && *m == Measure::AngularGap))
            .ok_or_else(|| Error::invalid("measure", format!("unknown measure `{s}`")))
    }
}

/// Example ids ordered easy to hard; ties keep id order.
pub fn sort_by_difficulty(report: &DifficultyReport, measure: Measure) -> Result<Vec<String>> {
    let mut keyed = Vec::with_capacity(report.len());
    for r in &report.records {
        let v = measure.easiness(r).ok_or_else(|| Error::MissingScore {
            measure: measure.to_string(),
            id: r.id.clone(),
        })?;
        if v.is_nan() {
            return Err(Error::NonFinite(format!("{measure} of `{}`", r.id)));
        }
        keyed.push((v, r.id.as_str()));
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(keyed.into_iter().map(|(_, id)| id.to_string()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub a_values: Vec<f64>,
    pub b_values: Vec<f64>,
}

impl SweepGrid {
    pub fn reference() -> Self {
        Self {
            a_values: PACING_A_GRID.to_vec(),
            b_values: PACING_B_GRID.to_vec(),
        }
    }

    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.a_values
            .iter()
            .flat_map(|&a| self.b_values.iter().map(move |&b| (a, b)))
            .collect()
    }

    /// A seeded random subset of `count` cells, in grid order.
    pub fn sample_cells(&self, count: usize, seed: u64) -> Vec<(f64, f64)> {
        let cells = self.cells();
        let mut idx: Vec<usize> = (0..cells.len()).collect();
        idx.shuffle(&mut rng::stream(seed, Stream::Sweep));
        let mut keep: Vec<usize> = idx.into_iter().take(count).collect();
        keep.sort_unstable();
        keep.into_iter().map(|i| cells[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub a: f64,
    pub b: f64,
    pub seed: u64,
    pub final_accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub a: f64,
    pub b: f64,
    pub median_accuracy: Option<f64>,
    pub completed: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepTable {
    pub runs: Vec<SweepRun>,
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    /// Rebuilds the per-cell medians from a list of runs, keeping the first
    /// appearance order of each `(a, b)` pair.
    pub fn from_runs(runs: Vec<SweepRun>) -> Self {
        let mut order: Vec<(f64, f64)> = Vec::new();
        for r in &runs {
            if !order.iter().any(|&(a, b)| a == r.a && b == r.b) {
                order.push((r.a, r.b));
            }
        }
        let cells = order
            .into_iter()
            .map(|(a, b)| {
                let accs: Vec<f64> = runs
                    .iter()
                    .filter(|r| r.a == a && r.b == b)
                    .filter_map(|r| r.final_accuracy)
                    .collect();
                SweepCell {
                    a,
                    b,
                    median_accuracy: median(&accs),
                    completed: accs.len(),
                }
            })
            .collect();
        Self { runs, cells }
    }

    pub fn cell(&self, a: f64, b: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.a == a && c.b == b)
    }

    pub fn best(&self) -> Option<&SweepCell> {
        self.cells
            .iter()
            .filter(|c| c.median_accuracy.is_some())
            .max_by(|x, y| x.median_accuracy.unwrap().total_cmp(&y.median_accuracy.unwrap()))
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Runs every `(a, b, seed)` combination and aggregates median accuracy per
/// cell. A failing run is recorded with its error and excluded from the
/// median.
pub fn sweep<F, E>(cells: &[(f64, f64)], seeds: &[u64], runner: F, exec: Exec) -> Result<SweepTable>
where
    F: Fn(f64, f64, u64) -> std::result::Result<f64, E> + Sync + Send,
    E: fmt::Display,
{
    if cells.is_empty() {
        return Err(Error::Empty("sweep grid".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Empty("sweep seeds".into()));
    }
    let jobs: Vec<(f64, f64, u64)> = cells
        .iter()
        .flat_map(|&(a, b)| seeds.iter().map(move |&s| (a, b, s)))
        .collect();
    let runs = exec.map(jobs.len(), |i| {
        let (a, b, seed) = jobs[i];
        match runner(a, b, seed) {
            Ok(acc) => SweepRun {
                a,
                b,
                seed,
                final_accuracy: Some(acc),
                error: None,
            },
            Err(e) => SweepRun {
                a,
                b,
                seed,
                final_accuracy: None,
                error: Some(e.to_string()),
            },
        }
    });
    Ok(SweepTable::from_runs(runs))
}
