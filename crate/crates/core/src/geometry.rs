//! Hypersphere geometry: cosines and angles between a feature and the class
//! weight directions, Angular Gap, AVH, and softmax confidence/margin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on a cosine outside `[-1, 1]` before it is treated as a
/// construction bug rather than rounding drift.
pub const COSINE_SLACK: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A single embedding with its identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    id: String,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if values.len() < 2 {
            return Err(Error::invalid("features", format!("`{id}` has dimension {} < 2", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("features of `{id}`")));
        }
        if norm(&values) == 0.0 {
            return Err(Error::ZeroNorm(format!("feature vector `{id}`")));
        }
        Ok(Self { id, values })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Class weight directions `w_0 .. w_{C-1}`, stored one class per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    classes: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ClassWeights {
    pub fn new(columns: Vec<Vec<f64>>) -> Result<Self> {
        let classes = columns.len();
        let dim = columns.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(classes * dim);
        for col in columns {
            if col.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: col.len(),
                });
            }
            data.extend(col);
        }
        Self::from_flat(classes, dim, data)
    }

    pub fn from_flat(classes: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("classes", format!("need at least 2 classes, got {classes}")));
        }
        if dim == 0 || data.len() != classes * dim {
            return Err(Error::LengthMismatch {
                what: "class weights",
                expected: classes * dim,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("class weights".into()));
        }
        let w = Self { classes, dim, data };
        for k in 0..classes {
            if norm(w.column(k)) == 0.0 {
                return Err(Error::ZeroNorm(format!("weight column {k}")));
            }
        }
        Ok(w)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Cosines and angles of one feature against every class direction.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleProfile {
    cosines: Vec<f64>,
    angles: Vec<f64>,
}

impl AngleProfile {
    /// Builds a profile from raw cosines, clamping drift of up to
    /// [`COSINE_SLACK`] back into `[-1, 1]`.
    pub fn from_cosines(cosines: Vec<f64>) -> Result<Self> {
        if cosines.len() < 2 {
            return Err(Error::invalid("cosines", "need at least 2 classes"));
        }
        let mut clamped = Vec::with_capacity(cosines.len());
        for (k, &c) in cosines.iter().enumerate() {
            if !c.is_finite() || c.abs() > 1.0 + COSINE_SLACK {
                return Err(Error::invalid("cosines", format!("entry {k} = {c} is not a cosine")));
            }
            clamped.push(c.clamp(-1.0, 1.0));
        }
        let angles = clamped.iter().map(|c| c.acos()).collect();
        Ok(Self {
            cosines: clamped,
            angles,
        })
    }

    pub fn cosines(&self) -> &[f64] {
        &self.cosines
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn classes(&self) -> usize {
        self.cosines.len()
    }
}

/// Raw cosine similarities of `x` against every class, without clamping.
pub fn cosines(x: &[f64], weights: &ClassWeights) -> Result<Vec<f64>> {
    if x.len() != weights.dim() {
        return Err(Error::DimensionMismatch {
            expected: weights.dim(),
            found: x.len(),
        });
    }
    let xn = norm(x);
    if xn == 0.0 {
        return Err(Error::ZeroNorm("feature vector".into()));
    }
    weights
        .columns()
        .enumerate()
        .map(|(k, w)| {
            let wn = norm(w);
            if wn == 0.0 {
                return Err(Error::ZeroNorm(format!("weight column {k}")));
            }
            Ok(dot(x, w) / (xn * wn))
        })
        .collect()
}

pub fn angle_profile(x: &[f64], weights: &ClassWeights) -> Result<AngleProfile> {
    AngleProfile::from_cosines(cosines(x, weights)?)
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// `sims[label] - max_{k != label} sims[k]` for any similarity vector.
pub fn gap_from_similarities(sims: &[f64], label: usize) -> Result<f64> {
    if sims.len() < 2 {
        return Err(Error::invalid("similarities", "need at least 2 classes"));
    }
    check_label(label, sims.len())?;
    let best_other = sims
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != label)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(sims[label] - best_other)
}

/// Angular Gap: cosine to the label class minus the largest cosine among the
/// other classes. Positive exactly when the label class is nearest.
pub fn angular_gap(profile: &AngleProfile, label: usize) -> Result<f64> {
    gap_from_similarities(&profile.cosines, label)
}

/// Angular Visual Hardness: the label angle over the sum of all angles.
pub fn avh(profile: &AngleProfile, label: usize) -> Result<f64> {
    check_label(label, profile.classes())?;
    let total: f64 = profile.angles.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateGeometry(
            "every angle is zero; the weight matrix has collapsed onto the feature".into(),
        ));
    }
    Ok(profile.angles[label] / total)
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Max-shifted log-softmax. The normalizer is `ln_1p` of the non-maximal
/// terms so a dominant logit keeps full relative precision.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let top = argmax(logits);
    let max = logits[top];
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != top)
        .map(|(_, z)| (z - max).exp())
        .sum();
    let log_sum = rest.ln_1p();
    logits.iter().map(|z| (z - max) - log_sum).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceMargin {
    /// Largest softmax probability.
    pub confidence: f64,
    /// `p_label - max_{k != label} p_k`.
    pub margin: f64,
}

pub fn confidence_and_margin(logits: &[f64], label: usize) -> Result<ConfidenceMargin> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let probs = softmax(logits);
    let margin = gap_from_similarities(&probs, label)?;
    let confidence = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ConfidenceMargin { confidence, margin })
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = k;
        }
    }
    best
}
