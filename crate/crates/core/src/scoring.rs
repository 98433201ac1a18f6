//! Per-example difficulty reports.

use crate::calibration::CalibrationParams;
use crate::data::dataset::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{angular_gap, argmax, avh, confidence_and_margin, AngleProfile};
use crate::model::HypersphereModel;
use crate::trainer::LearningDynamics;

#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyRecord {
    pub id: String,
    pub label: usize,
    pub predicted: usize,
    pub raw_gap: f64,
    pub calibrated_gap: Option<f64>,
    pub avh: f64,
    pub confidence: f64,
    pub margin: f64,
    pub forgetting: Option<u32>,
}

/// Difficulty scores for every example of a dataset, ordered by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DifficultyReport {
    pub records: Vec<DifficultyRecord>,
}

impl DifficultyReport {
    pub fn new(mut records: Vec<DifficultyRecord>) -> Self {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DifficultyRecord> {
        self.records
            .binary_search_by(|r| r.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.records[i])
    }
}

/// Scores one feature vector. Confidence and margin use the raw logits
/// `s cos theta`; the calibrated gap is filled when `calibration` is given.
pub fn score_example(
    model: &HypersphereModel,
    features: &[f64],
    label: usize,
    calibration: Option<&CalibrationParams>,
) -> Result<(usize, f64, Option<f64>, f64, f64, f64)> {
    let profile = AngleProfile::from_cosines(model.cosines(features)?)?;
    let raw_gap = angular_gap(&profile, label)?;
    let hardness = avh(&profile, label)?;
    let logits: Vec<f64> = profile.cosines().iter().map(|c| model.scale * c).collect();
    let cm = confidence_and_margin(&logits, label)?;
    let calibrated = calibration
        .map(|p| crate::calibration::calibrated_angular_gap(p, &profile, label))
        .transpose()?;
    Ok((argmax(profile.cosines()), raw_gap, calibrated, hardness, cm.confidence, cm.margin))
}

pub fn score_dataset(
    model: &HypersphereModel,
    dataset: &EmbeddingDataset,
    dynamics: Option<&LearningDynamics>,
    calibration: Option<&CalibrationParams>,
    exec: Exec,
) -> Result<DifficultyReport> {
    if dataset.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            found: dataset.dim(),
        });
    }
    if let Some(d) = dynamics {
        if d.forgetting.len() != dataset.len() {
            return Err(Error::LengthMismatch {
                what: "learning dynamics",
                expected: dataset.len(),
                found: d.forgetting.len(),
            });
        }
    }
    let examples = dataset.examples();
    let records = exec.try_map(examples.len(), |i| {
        let e = &examples[i];
        let (predicted, raw_gap, calibrated_gap, avh, confidence, margin) =
            score_example(model, &e.features, e.label, calibration)?;
        Ok::<_, Error>(DifficultyRecord {
            id: e.id.clone(),
            label: e.label,
            predicted,
            raw_gap,
            calibrated_gap,
            avh,
            confidence,
            margin,
            forgetting: dynamics.map(|d| d.forgetting[i]),
        })
    })?;
    Ok(DifficultyReport::new(records))
}
