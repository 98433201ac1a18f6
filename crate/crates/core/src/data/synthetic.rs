//! Synthetic embedding benchmarks with a known ground-truth difficulty.
//!
//! Class centers sit on the unit sphere with one common pairwise angle.
//! Points are `center + spread * N(0, I)`. The ground-truth difficulty of a
//! point is its Bayes cosine margin: cosine to its generating center minus the
//! largest cosine to any other center.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::dataset::{EmbeddingDataset, Example};
use crate::error::{Error, Result};
use crate::geometry::{dot, norm};
use crate::rng::{self, Stream};

/// Ground truth assigned to label-flipped points: the lower end of the
/// margin range, so they always rank hardest.
pub const FLIPPED_MARGIN: f64 = -2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub points_per_class: usize,
    /// Common pairwise angle between class centers, radians.
    pub separation: f64,
    /// Standard deviation of the isotropic perturbation around a unit center.
    pub spread: f64,
    pub noise_rate: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("classes", "need at least 2"));
        }
        if self.dim < 2 {
            return Err(Error::invalid("dim", "need at least 2"));
        }
        if self.points_per_class == 0 {
            return Err(Error::invalid("points_per_class", "must be positive"));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(Error::invalid("spread", format!("{} must be > 0", self.spread)));
        }
        if !(0.0..0.5).contains(&self.noise_rate) {
            return Err(Error::invalid("noise_rate", format!("{} not in [0, 0.5)", self.noise_rate)));
        }
        if !(self.separation > 0.0 && self.separation <= std::f64::consts::PI) {
            return Err(Error::invalid("separation", format!("{} not in (0, pi]", self.separation)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: EmbeddingDataset,
    /// Bayes cosine margin per example, in dataset order.
    pub ground_truth: Vec<f64>,
    /// Generating class of each example (differs from the label when flipped).
    pub true_labels: Vec<usize>,
    pub flipped: Vec<bool>,
    pub centers: Vec<Vec<f64>>,
    pub spec: SyntheticSpec,
}

/// Unit vectors in `R^dim` with every pairwise angle equal to `separation`.
///
/// Centers are `cos(a) e_0 + sin(a) v_k` where the `v_k` form a regular
/// simplex in the span of `e_1 .. e_{C-1}`. Requires `classes <= dim` and
/// `cos(separation) >= -1/(C-1)`.
pub fn simplex_centers(classes: usize, dim: usize, separation: f64) -> Result<Vec<Vec<f64>>> {
    if classes < 2 {
        return Err(Error::InfeasibleSeparation("need at least 2 classes".into()));
    }
    if classes > dim {
        return Err(Error::InfeasibleSeparation(format!(
            "{classes} equiangular centers need dimension >= {classes}, got {dim}"
        )));
    }
    let c = classes as f64;
    let sin2 = (1.0 - separation.cos()) * (c - 1.0) / c;
    if sin2 > 1.0 + 1e-12 {
        return Err(Error::InfeasibleSeparation(format!(
            "angle {separation} exceeds the regular-simplex angle {} for {classes} classes",
            (-1.0 / (c - 1.0)).acos()
        )));
    }
    let sin_a = sin2.min(1.0).sqrt();
    let cos_a = (1.0 - sin2.min(1.0)).sqrt();

    // Regular simplex: e_k - mean in R^C, re-expressed in an orthonormal basis
    // of the (C-1)-dimensional sum-zero subspace.
    let raw: Vec<Vec<f64>> = (0..classes)
        .map(|k| (0..classes).map(|j| if j == k { 1.0 } else { 0.0 } - 1.0 / c).collect())
        .collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(classes - 1);
    for v in raw.iter().take(classes - 1) {
        let mut u = v.clone();
        for b in &basis {
            let p = dot(&u, b);
            for (ui, bi) in u.iter_mut().zip(b) {
                *ui -= p * bi;
            }
        }
        let n = norm(&u);
        basis.push(u.into_iter().map(|x| x / n).collect());
    }
    let centers = raw
        .iter()
        .map(|v| {
            let coords: Vec<f64> = basis.iter().map(|b| dot(v, b)).collect();
            let n = norm(&coords);
            let mut center = vec![0.0; dim];
            center[0] = cos_a;
            for (j, x) in coords.iter().enumerate() {
                center[j + 1] = sin_a * x / n;
            }
            center
        })
        .collect();
    Ok(centers)
}

/// Cosine margin of `x` with respect to class `own` among `centers`.
pub fn center_margin(x: &[f64], centers: &[Vec<f64>], own: usize) -> f64 {
    let xn = norm(x);
    let cos: Vec<f64> = centers.iter().map(|c| dot(x, c) / (xn * norm(c))).collect();
    let best_other = cos
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != own)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    cos[own] - best_other
}

fn draw_point<R: Rng>(center: &[f64], spread: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let x: Vec<f64> = center
            .iter()
            .map(|c| c + spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if norm(&x) > 0.0 {
            return x;
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let centers = simplex_centers(spec.classes, spec.dim, spec.separation)?;
    let mut sample_rng = rng::stream(spec.seed, Stream::Sample);
    let n = spec.classes * spec.points_per_class;

    let mut features = Vec::with_capacity(n);
    let mut true_labels = Vec::with_capacity(n);
    for _ in 0..spec.points_per_class {
        for (k, center) in centers.iter().enumerate() {
            features.push(draw_point(center, spec.spread, &mut sample_rng));
            true_labels.push(k);
        }
    }

    let mut noise_rng = rng::stream(spec.seed, Stream::Noise);
    let flips = (spec.noise_rate * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut noise_rng);
    let mut flipped = vec![false; n];
    let mut labels = true_labels.clone();
    for &i in order.iter().take(flips) {
        let shift = noise_rng.random_range(1..spec.classes);
        labels[i] = (true_labels[i] + shift) % spec.classes;
        flipped[i] = true;
    }

    let ground_truth: Vec<f64> = (0..n)
        .map(|i| {
            if flipped[i] {
                FLIPPED_MARGIN
            } else {
                center_margin(&features[i], &centers, true_labels[i])
            }
        })
        .collect();

    let examples = features
        .into_iter()
        .zip(&labels)
        .enumerate()
        .map(|(i, (f, &label))| Example {
            id: format!("s{i:06}"),
            label,
            features: f,
        })
        .collect();
    Ok(SyntheticData {
        dataset: EmbeddingDataset::new(examples, spec.classes)?,
        ground_truth,
        true_labels,
        flipped,
        centers,
        spec: spec.clone(),
    })
}

impl SyntheticData {
    /// A noise-free sample from the same class centers, drawn from a stream
    /// disjoint from the training draws. Ids are prefixed with `t`.
    pub fn clean_sample(&self, points_per_class: usize) -> Result<EmbeddingDataset> {
        let mut rng = rng::stream(self.spec.seed, Stream::Eval);
        let mut examples = Vec::with_capacity(points_per_class * self.centers.len());
        for _ in 0..points_per_class {
            for (k, center) in self.centers.iter().enumerate() {
                examples.push(Example {
                    id: format!("t{:06}", examples.len()),
                    label: k,
                    features: draw_point(center, self.spec.spread, &mut rng),
                });
            }
        }
        EmbeddingDataset::new(examples, self.centers.len())
    }

    /// Fraction of points whose generating center is also the nearest one.
    pub fn bayes_accuracy(&self) -> f64 {
        let hits = self
            .dataset
            .examples()
            .iter()
            .zip(&self.true_labels)
            .filter(|(e, &k)| center_margin(&e.features, &self.centers, k) > 0.0)
            .count();
        hits as f64 / self.dataset.len() as f64
    }
}
