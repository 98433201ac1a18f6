//! Post-training calibration of hyperspherical similarities.
//!
//! Global calibration multiplies every cosine by one scalar, class-wise
//! calibration multiplies the cosine of class `k` by its own scale, and
//! temperature scaling divides the logits `s cos theta` by `T`. Scales act as
//! a multiplicative stand-in for shifting each angle by a small amount:
//! `cos(theta + delta) ~= phi * cos(theta)`. A calibrated similarity above 1
//! has no real angle; it is treated as a logit-like score from then on.

use serde::{Deserialize, Serialize};

use crate::data::dataset::{check_disjoint, EmbeddingDataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{argmax, gap_from_similarities, log_softmax, AngleProfile};
use crate::metrics;
use crate::model::HypersphereModel;
use crate::optim::{self, LbfgsConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationKind {
    Global,
    Classwise,
    Temperature,
}

impl std::fmt::Display for CalibrationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Global => "global",
            Self::Classwise => "classwise",
            Self::Temperature => "temperature",
        })
    }
}

impl std::str::FromStr for CalibrationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "classwise" | "class-wise" => Ok(Self::Classwise),
            "temperature" => Ok(Self::Temperature),
            other => Err(Error::invalid("calibration kind", format!("unknown kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CalibrationParams {
    Global { scale: f64 },
    Classwise { scales: Vec<f64> },
    Temperature { temperature: f64 },
}

/// What a calibration is applied to.
#[derive(Debug, Clone, Copy)]
pub enum CalibrationInput<'a> {
    Profile(&'a AngleProfile),
    Logits(&'a [f64]),
}

impl CalibrationParams {
    pub fn identity(kind: CalibrationKind, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("classes", format!("calibration needs at least 2 classes, got {classes}")));
        }
        Ok(match kind {
            CalibrationKind::Global => Self::Global { scale: 1.0 },
            CalibrationKind::Classwise => Self::Classwise {
                scales: vec![1.0; classes],
            },
            CalibrationKind::Temperature => Self::Temperature { temperature: 1.0 },
        })
    }

    pub fn kind(&self) -> CalibrationKind {
        match self {
            Self::Global { .. } => CalibrationKind::Global,
            Self::Classwise { .. } => CalibrationKind::Classwise,
            Self::Temperature { .. } => CalibrationKind::Temperature,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Self::Global { scale } => vec![*scale],
            Self::Classwise { scales } => scales.clone(),
            Self::Temperature { temperature } => vec![*temperature],
        }
    }

    fn from_vec(kind: CalibrationKind, v: Vec<f64>) -> Self {
        match kind {
            CalibrationKind::Global => Self::Global { scale: v[0] },
            CalibrationKind::Classwise => Self::Classwise { scales: v },
            CalibrationKind::Temperature => Self::Temperature { temperature: v[0] },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_vec().iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("calibration", "every scale must be finite and > 0"));
        }
        Ok(())
    }

    /// Calibrated similarities `cos xi_k` from raw cosines.
    pub fn calibrate_cosines(&self, cosines: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Global { scale } => Ok(cosines.iter().map(|c| scale * c).collect()),
            Self::Classwise { scales } => {
                if scales.len() != cosines.len() {
                    return Err(Error::LengthMismatch {
                        what: "class scales",
                        expected: cosines.len(),
                        found: scales.len(),
                    });
                }
                Ok(cosines.iter().zip(scales).map(|(c, s)| s * c).collect())
            }
            Self::Temperature { .. } => Err(Error::invalid("calibration", "temperature scaling applies to logits")),
        }
    }

    /// Calibrated logits for a model with NSL scale `s`.
    pub fn logits(&self, model_scale: f64, cosines: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Temperature { temperature } => Ok(cosines.iter().map(|c| model_scale * c / temperature).collect()),
            _ => Ok(self.calibrate_cosines(cosines)?.into_iter().map(|c| model_scale * c).collect()),
        }
    }
}

pub fn apply_calibration(params: &CalibrationParams, input: CalibrationInput<'_>) -> Result<Vec<f64>> {
    match (params, input) {
        (CalibrationParams::Temperature { temperature }, CalibrationInput::Logits(z)) => {
            Ok(z.iter().map(|v| v / temperature).collect())
        }
        (CalibrationParams::Temperature { .. }, CalibrationInput::Profile(_)) => {
            Err(Error::invalid("calibration input", "temperature scaling expects logits"))
        }
        (_, CalibrationInput::Profile(p)) => params.calibrate_cosines(p.cosines()),
        (_, CalibrationInput::Logits(_)) => Err(Error::invalid(
            "calibration input",
            "global and class-wise calibration expect an angle profile",
        )),
    }
}

/// Angular Gap on calibrated similarities.
pub fn calibrated_angular_gap(params: &CalibrationParams, profile: &AngleProfile, label: usize) -> Result<f64> {
    gap_from_similarities(&params.calibrate_cosines(profile.cosines())?, label)
}

/// Calibration NLL and its gradient with respect to the calibration
/// parameters, over precomputed raw cosines (one row per example).
pub fn calibration_loss_and_grad(
    kind: CalibrationKind,
    params: &[f64],
    cosines: &[Vec<f64>],
    labels: &[usize],
    model_scale: f64,
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    let n = cosines.len();
    if n == 0 {
        return Err(Error::Empty("calibration split".into()));
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: n,
            found: labels.len(),
        });
    }
    let classes = cosines[0].len();
    let expected = if kind == CalibrationKind::Classwise { classes } else { 1 };
    if params.len() != expected {
        return Err(Error::LengthMismatch {
            what: "calibration parameters",
            expected,
            found: params.len(),
        });
    }
    let (loss, grad) = exec.chunked_sum(
        n,
        || (0.0f64, vec![0.0; expected]),
        |range, (loss, grad)| {
            for i in range {
                let c = &cosines[i];
                let y = labels[i];
                let logits: Vec<f64> = match kind {
                    CalibrationKind::Global => c.iter().map(|v| model_scale * params[0] * v).collect(),
                    CalibrationKind::Classwise => c.iter().zip(params).map(|(v, p)| model_scale * p * v).collect(),
                    CalibrationKind::Temperature => c.iter().map(|v| model_scale * v / params[0]).collect(),
                };
                let logp = log_softmax(&logits);
                *loss -= logp[y];
                for k in 0..classes {
                    let r = logp[k].exp() - if k == y { 1.0 } else { 0.0 };
                    match kind {
                        CalibrationKind::Global => grad[0] += r * model_scale * c[k],
                        CalibrationKind::Classwise => grad[k] += r * model_scale * c[k],
                        CalibrationKind::Temperature => grad[0] -= r * logits[k] / params[0],
                    }
                }
            }
        },
        |(tl, tg), (l, g)| {
            *tl += l;
            tg.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        },
    );
    let inv = 1.0 / n as f64;
    Ok((loss * inv, grad.into_iter().map(|g| g * inv).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub optimizer: LbfgsConfig,
    pub bins: usize,
    pub exec: Exec,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            optimizer: LbfgsConfig::default(),
            bins: metrics::DEFAULT_BINS,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFitReport {
    pub kind: CalibrationKind,
    pub iterations: usize,
    pub initial_nll: f64,
    pub final_nll: f64,
    pub initial_ece: f64,
    pub final_ece: f64,
    pub converged: bool,
    pub fell_back_to_gradient_descent: bool,
}

/// Expected calibration error of the calibrated model on raw cosines.
pub fn calibrated_ece(
    params: &CalibrationParams,
    model_scale: f64,
    cosines: &[Vec<f64>],
    labels: &[usize],
    bins: usize,
) -> Result<f64> {
    let mut conf = Vec::with_capacity(cosines.len());
    let mut correct = Vec::with_capacity(cosines.len());
    for (c, &y) in cosines.iter().zip(labels) {
        let logits = params.logits(model_scale, c)?;
        let logp = log_softmax(&logits);
        let k = argmax(&logits);
        conf.push(logp[k].exp());
        correct.push(k == y);
    }
    Ok(metrics::ece(&conf, &correct, bins)?.0)
}

/// Fits calibration parameters on precomputed raw cosines, starting from the
/// identity.
pub fn fit_on_cosines(
    cosines: &[Vec<f64>],
    labels: &[usize],
    model_scale: f64,
    kind: CalibrationKind,
    cfg: &CalibrationConfig,
) -> Result<(CalibrationParams, CalibrationFitReport)> {
    let classes = cosines.first().map_or(0, Vec::len);
    let start = CalibrationParams::identity(kind, classes)?;
    let (initial_nll, _) = calibration_loss_and_grad(kind, &start.to_vec(), cosines, labels, model_scale, cfg.exec)?;
    if !initial_nll.is_finite() {
        return Err(Error::NonFinite("calibration loss at identity".into()));
    }
    let result = optim::minimize(
        |p| calibration_loss_and_grad(kind, p, cosines, labels, model_scale, cfg.exec),
        &start.to_vec(),
        &cfg.optimizer,
    )?;
    let params = CalibrationParams::from_vec(kind, result.x);
    let report = CalibrationFitReport {
        kind,
        iterations: result.iterations,
        initial_nll: result.initial_value,
        final_nll: result.value,
        initial_ece: calibrated_ece(&start, model_scale, cosines, labels, cfg.bins)?,
        final_ece: calibrated_ece(&params, model_scale, cosines, labels, cfg.bins)?,
        converged: result.converged,
        fell_back_to_gradient_descent: result.fell_back,
    };
    Ok((params, report))
}

/// Raw cosine rows and labels of a dataset under a model.
pub fn dataset_cosines(model: &HypersphereModel, data: &EmbeddingDataset, exec: Exec) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let ex = data.examples();
    let rows = exec.try_map(ex.len(), |i| model.cosines(&ex[i].features))?;
    Ok((rows, data.labels()))
}

/// Fits calibration on a holdout split with the model weights frozen. When
/// the training split is supplied, the two must not share ids.
pub fn fit_calibration(
    model: &HypersphereModel,
    holdout: &EmbeddingDataset,
    kind: CalibrationKind,
    cfg: &CalibrationConfig,
    train: Option<&EmbeddingDataset>,
) -> Result<(CalibrationParams, CalibrationFitReport)> {
    if let Some(train) = train {
        check_disjoint(train, holdout)?;
    }
    if holdout.classes() != model.classes() {
        return Err(Error::LengthMismatch {
            what: "holdout classes",
            expected: model.classes(),
            found: holdout.classes(),
        });
    }
    let (rows, labels) = dataset_cosines(model, holdout, cfg.exec)?;
    fit_on_cosines(&rows, &labels, model.scale, kind, cfg)
}
