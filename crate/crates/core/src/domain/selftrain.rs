//! A small two-domain self-training loop on synthetic embeddings.
//!
//! The model is a linear feature map `z = H x` (initialized to the identity)
//! followed by the hyperspherical head. Each epoch the loop calibrates the
//! head on a source holdout, scores source examples by calibrated Angular
//! Gap, pseudo-labels the target from calibrated similarities, and then takes
//! SGD steps on weighted NSL plus, after a warmup, the reverse transfer term
//! and the curricular local MMD on normalized embeddings.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calibration::{fit_on_cosines, CalibrationConfig, CalibrationKind, CalibrationParams};
use crate::curriculum::{sigmoid, SigmoidWeighting};
use crate::data::dataset::{EmbeddingDataset, Example};
use crate::data::synthetic::simplex_centers;
use crate::domain::discrepancy::{local_mmd_with_grad, mmd, ClassWeighting, Kernel, LocalMmdInput};
use crate::domain::reverse::reverse_loss_with_grad;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{argmax, dot, gap_from_similarities, norm, softmax};
use crate::model::{nsl_loss_and_grad, Batch, HiddenLayer, HypersphereModel, DEFAULT_SCALE};
use crate::rng::{self, Stream};
use crate::trainer::{accuracy, Sgd};

/// Unlabeled target features. Labels, when known, live in [`TargetLabels`]
/// and are only ever read for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet {
    ids: Vec<String>,
    features: Vec<Vec<f64>>,
}

impl UnlabeledSet {
    pub fn new(ids: Vec<String>, features: Vec<Vec<f64>>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Empty("target set".into()));
        }
        if ids.len() != features.len() {
            return Err(Error::LengthMismatch {
                what: "target ids",
                expected: features.len(),
                found: ids.len(),
            });
        }
        let dim = features[0].len();
        for (id, f) in ids.iter().zip(&features) {
            if f.len() != dim {
                return Err(Error::InconsistentDimension {
                    first_id: ids[0].clone(),
                    first_dim: dim,
                    id: id.clone(),
                    dim: f.len(),
                });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("target features of {id}")));
            }
            if norm(f) == 0.0 {
                return Err(Error::ZeroNorm(format!("target features of {id}")));
            }
        }
        Ok(Self { ids, features })
    }

    /// Drops the labels of a labeled dataset.
    pub fn from_dataset(data: &EmbeddingDataset) -> Self {
        Self {
            ids: data.examples().iter().map(|e| e.id.clone()).collect(),
            features: data.examples().iter().map(|e| e.features.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }
}

/// Held-out target labels for evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetLabels(Vec<usize>);

impl TargetLabels {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self(labels))
    }

    pub fn from_dataset(data: &EmbeddingDataset) -> Self {
        Self(data.labels())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    pub source: EmbeddingDataset,
    pub target: UnlabeledSet,
}

impl DomainPair {
    pub fn new(source: EmbeddingDataset, target: UnlabeledSet) -> Result<Self> {
        if source.dim() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: source.dim(),
                found: target.dim(),
            });
        }
        Ok(Self { source, target })
    }
}

/// Gaussian class blobs around scaled simplex directions; the target domain
/// translates every class by `shift * sigma` along one random unit direction
/// and scales the within-class noise by `target_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShiftSpec {
    pub classes: usize,
    pub dim: usize,
    pub source_per_class: usize,
    pub target_per_class: usize,
    /// Angle between class mean directions, radians.
    pub separation: f64,
    pub radius: f64,
    pub sigma: f64,
    /// Mean translation in units of `sigma`.
    pub shift: f64,
    pub target_scale: f64,
    pub seed: u64,
}

impl Default for DomainShiftSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            dim: 8,
            source_per_class: 150,
            target_per_class: 150,
            separation: std::f64::consts::FRAC_PI_2,
            radius: 3.0,
            sigma: 1.0,
            shift: 1.5,
            target_scale: 1.0,
            seed: 0,
        }
    }
}

pub fn generate_domain_pair(spec: &DomainShiftSpec) -> Result<(DomainPair, TargetLabels)> {
    if spec.source_per_class == 0 || spec.target_per_class == 0 {
        return Err(Error::invalid("points per class", "must be >= 1"));
    }
    for (name, v) in [("radius", spec.radius), ("sigma", spec.sigma), ("target_scale", spec.target_scale)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(name, "must be > 0"));
        }
    }
    if !(spec.shift >= 0.0 && spec.shift.is_finite()) {
        return Err(Error::invalid("shift", "must be >= 0"));
    }
    let means: Vec<Vec<f64>> = simplex_centers(spec.classes, spec.dim, spec.separation)?
        .into_iter()
        .map(|c| c.into_iter().map(|v| v * spec.radius).collect())
        .collect();
    let mut src_rng = rng::stream(spec.seed, Stream::Sample);
    let mut shift_rng = rng::stream(spec.seed, Stream::Shift);
    let direction: Vec<f64> = loop {
        let g: Vec<f64> = (0..spec.dim).map(|_| shift_rng.sample(StandardNormal)).collect();
        let n = norm(&g);
        if n > 1e-12 {
            break g.into_iter().map(|v| v / n).collect();
        }
    };

    let draw = |rng: &mut rand_chacha::ChaCha8Rng, mean: &[f64], offset: f64, spread: f64| -> Vec<f64> {
        loop {
            let x: Vec<f64> = mean
                .iter()
                .zip(&direction)
                .map(|(m, u)| m + offset * u + spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if norm(&x) > 0.0 {
                break x;
            }
        }
    };

    let mut source = Vec::with_capacity(spec.classes * spec.source_per_class);
    for i in 0..spec.source_per_class {
        for (k, m) in means.iter().enumerate() {
            source.push(Example {
                id: format!("src{:06}", i * spec.classes + k),
                label: k,
                features: draw(&mut src_rng, m, 0.0, spec.sigma),
            });
        }
    }
    let mut ids = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for i in 0..spec.target_per_class {
        for (k, m) in means.iter().enumerate() {
            ids.push(format!("tgt{:06}", i * spec.classes + k));
            features.push(draw(&mut shift_rng, m, spec.shift * spec.sigma, spec.target_scale * spec.sigma));
            labels.push(k);
        }
    }
    let pair = DomainPair::new(
        EmbeddingDataset::new(source, spec.classes)?,
        UnlabeledSet::new(ids, features)?,
    )?;
    Ok((pair, TargetLabels::new(labels, spec.classes)?))
}

/// How source examples are weighted during adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExampleWeighting {
    /// Every example weighs 0.5, the value of the sigmoid at zero slope.
    Uniform,
    /// `sigmoid(lambda(t) * calibrated gap)` with `lambda` moving linearly
    /// from `start` to `end` over all optimizer steps of the run.
    Sigmoid { start: f64, end: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub scale: f64,
    /// Fraction of the source set held out for per-epoch calibration.
    pub holdout_fraction: f64,
    /// Epochs of source-only training before the transfer terms switch on.
    pub warmup_epochs: usize,
    pub reverse_weight: f64,
    pub mmd_weight: f64,
    pub class_weighting: ClassWeighting,
    pub weighting: ExampleWeighting,
    /// When false only the weighted source NSL is optimized.
    pub transfer: bool,
    /// Points per domain used for the MMD trajectory.
    pub mmd_eval_cap: usize,
    pub seed: u64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            scale: DEFAULT_SCALE,
            holdout_fraction: 0.2,
            warmup_epochs: 5,
            reverse_weight: 1.0,
            mmd_weight: 1.0,
            class_weighting: ClassWeighting::Uniform,
            weighting: ExampleWeighting::Sigmoid { start: 4.0, end: -2.0 },
            transfer: true,
            mmd_eval_cap: 256,
            seed: 0,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs/batch_size", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.reverse_weight >= 0.0 && self.mmd_weight >= 0.0) {
            return Err(Error::invalid("loss weights", "must be >= 0"));
        }
        if self.mmd_eval_cap < 2 {
            return Err(Error::invalid("mmd_eval_cap", "must be >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub epoch: usize,
    pub source_accuracy: f64,
    pub target_accuracy: Option<f64>,
    pub mmd: f64,
    /// Mean source weight used during the epoch; absent for the initial point.
    pub mean_example_weight: Option<f64>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SelfTrainOutcome {
    pub model: HypersphereModel,
    pub calibration: CalibrationParams,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Number of consecutive single-class pseudo-labelings that triggers a
/// collapse warning.
pub const COLLAPSE_EPOCHS: usize = 3;

fn unit(z: &[f64]) -> (Vec<f64>, f64) {
    let n = norm(z);
    if n == 0.0 {
        return (vec![0.0; z.len()], 0.0);
    }
    (z.iter().map(|v| v / n).collect(), n)
}

/// Chain rule through `u = z / |z|`.
fn through_normalization(g: &[f64], u: &[f64], n: f64) -> Vec<f64> {
    if n == 0.0 {
        return vec![0.0; g.len()];
    }
    let gu = dot(g, u);
    g.iter().zip(u).map(|(gi, ui)| (gi - gu * ui) / n).collect()
}

fn evenly_spaced(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    (0..cap).map(|i| i * n / cap).collect()
}

fn embedded_units(model: &HypersphereModel, xs: &[&[f64]]) -> Vec<Vec<f64>> {
    xs.iter().map(|x| unit(&model.embed(x)).0).collect()
}

pub fn curricular_self_train(
    pair: &DomainPair,
    config: &SelfTrainConfig,
    eval_labels: Option<&TargetLabels>,
    exec: Exec,
) -> Result<SelfTrainOutcome> {
    config.validate()?;
    let classes = pair.source.classes();
    let dim = pair.source.dim();
    if pair.target.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: pair.target.dim(),
        });
    }
    if let Some(l) = eval_labels {
        if l.as_slice().len() != pair.target.len() {
            return Err(Error::LengthMismatch {
                what: "target labels",
                expected: pair.target.len(),
                found: l.as_slice().len(),
            });
        }
    }
    let (train, holdout) = pair.source.split_holdout(config.holdout_fraction, config.seed)?;
    let mut model = HypersphereModel::new_hidden(
        classes,
        dim,
        HiddenLayer::identity(dim),
        config.scale,
        &mut rng::stream(config.seed, Stream::Init),
    )?;
    let mut sgd = Sgd::new(&model, config.momentum, config.weight_decay);
    let mut shuffle_rng = rng::stream(config.seed, Stream::Shuffle);
    let cal_cfg = CalibrationConfig {
        exec,
        ..Default::default()
    };

    let examples = train.examples();
    let n = examples.len();
    let target = pair.target.features();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = (config.epochs * steps_per_epoch) as f64;
    let slope = match config.weighting {
        ExampleWeighting::Uniform => None,
        ExampleWeighting::Sigmoid { start, end } => Some(SigmoidWeighting::new(start, end, total_steps)?),
    };

    // Fixed evaluation subsamples and kernel, so the MMD trajectory is
    // comparable across epochs.
    let eval_src: Vec<&[f64]> = evenly_spaced(n, config.mmd_eval_cap)
        .into_iter()
        .map(|i| examples[i].features.as_slice())
        .collect();
    let eval_tgt: Vec<&[f64]> = evenly_spaced(target.len(), config.mmd_eval_cap)
        .into_iter()
        .map(|i| target[i].as_slice())
        .collect();
    let kernel = {
        let mut pooled = embedded_units(&model, &eval_src);
        pooled.extend(embedded_units(&model, &eval_tgt));
        Kernel::median_heuristic(&pooled)?
    };
    let measure = |model: &HypersphereModel| -> Result<(f64, Option<f64>, f64)> {
        let src_acc = accuracy(model, &train, exec)?;
        let tgt_acc = match eval_labels {
            None => None,
            Some(labels) => {
                let preds = exec.try_map(target.len(), |i| model.predict(&target[i]))?;
                let hits = preds.iter().zip(labels.as_slice()).filter(|(p, y)| p == y).count();
                Some(hits as f64 / target.len() as f64)
            }
        };
        let d = mmd(&kernel, &embedded_units(model, &eval_src), &embedded_units(model, &eval_tgt))?;
        Ok((src_acc, tgt_acc, d))
    };

    let (s0, t0, m0) = measure(&model)?;
    let mut trajectory = vec![TrajectoryPoint {
        epoch: 0,
        source_accuracy: s0,
        target_accuracy: t0,
        mmd: m0,
        mean_example_weight: None,
        warning: None,
    }];
    let mut calibration = CalibrationParams::identity(CalibrationKind::Classwise, classes)?;
    let mut single_class_run = 0usize;
    let mut step = 0usize;
    let mut target_order: Vec<usize> = (0..target.len()).collect();

    for epoch in 0..config.epochs {
        let hold_cos = exec.try_map(holdout.len(), |i| model.cosines(&holdout.examples()[i].features))?;
        calibration = fit_on_cosines(&hold_cos, &holdout.labels(), model.scale, CalibrationKind::Classwise, &cal_cfg)?.0;
        let gaps = exec.try_map(n, |i| {
            let sims = calibration.calibrate_cosines(&model.cosines(&examples[i].features)?)?;
            gap_from_similarities(&sims, examples[i].label)
        })?;
        let target_sims = exec.try_map(target.len(), |i| calibration.calibrate_cosines(&model.cosines(&target[i])?))?;
        let pseudo_labels: Vec<usize> = target_sims.iter().map(|s| argmax(s)).collect();
        let pseudo_probs: Vec<Vec<f64>> = target_sims
            .iter()
            .map(|s| softmax(&s.iter().map(|v| model.scale * v).collect::<Vec<_>>()))
            .collect();
        let mut warning = None;
        if pseudo_labels.iter().all(|&y| y == pseudo_labels[0]) {
            single_class_run += 1;
            if single_class_run >= COLLAPSE_EPOCHS {
                warning = Some(format!(
                    "pseudo-labels collapsed to class {} for {single_class_run} consecutive epochs",
                    pseudo_labels[0]
                ));
            }
        } else {
            single_class_run = 0;
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);
        target_order.shuffle(&mut shuffle_rng);
        let lr = config.learning_rate * (1.0 + (std::f64::consts::PI * epoch as f64 / config.epochs as f64).cos()) / 2.0;
        let transfer = config.transfer && epoch >= config.warmup_epochs;
        let mut weight_sum = 0.0;
        let mut tgt_cursor = 0usize;

        for chunk in order.chunks(config.batch_size) {
            let weights: Vec<f64> = match &slope {
                None => vec![0.5; chunk.len()],
                Some(w) => {
                    let lambda = w.slope(step as f64);
                    chunk.iter().map(|&i| sigmoid(lambda * gaps[i])).collect()
                }
            };
            weight_sum += weights.iter().sum::<f64>();
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| examples[i].features.as_slice()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| examples[i].label).collect();
            let mut batch = Batch::new(xs.clone(), ys.clone());
            batch.weights = Some(weights.clone());
            batch.index = step;
            let (_, mut grads) = nsl_loss_and_grad(&model, &batch, exec)?;

            if transfer && weights.iter().sum::<f64>() > 0.0 {
                let tb: Vec<usize> = (0..config.batch_size.min(target.len()))
                    .map(|j| target_order[(tgt_cursor + j) % target.len()])
                    .collect();
                tgt_cursor += tb.len();
                let xt: Vec<&[f64]> = tb.iter().map(|&j| target[j].as_slice()).collect();
                let zs: Vec<Vec<f64>> = xs.iter().map(|x| model.embed(x)).collect();
                let zt: Vec<Vec<f64>> = xt.iter().map(|x| model.embed(x)).collect();
                let mut dzs = vec![vec![0.0; dim]; zs.len()];
                let mut dzt = vec![vec![0.0; dim]; zt.len()];

                if config.reverse_weight > 0.0 && zs.iter().chain(&zt).all(|z| norm(z) > 0.0) {
                    let yt: Vec<usize> = tb.iter().map(|&j| pseudo_labels[j]).collect();
                    let r = reverse_loss_with_grad(&zs, &ys, &zt, &yt, &weights, true)?;
                    let c = config.reverse_weight / (weights.iter().sum::<f64>() * zt.len() as f64);
                    accumulate(&mut dzs, &r.grad_source, c);
                    accumulate(&mut dzt, &r.grad_target, c);
                }
                if config.mmd_weight > 0.0 {
                    let us: Vec<(Vec<f64>, f64)> = zs.iter().map(|z| unit(z)).collect();
                    let ut: Vec<(Vec<f64>, f64)> = zt.iter().map(|z| unit(z)).collect();
                    let su: Vec<Vec<f64>> = us.iter().map(|p| p.0.clone()).collect();
                    let tu: Vec<Vec<f64>> = ut.iter().map(|p| p.0.clone()).collect();
                    let probs: Vec<Vec<f64>> = tb.iter().map(|&j| pseudo_probs[j].clone()).collect();
                    let u = config.class_weighting.resolve(&ys, classes)?;
                    let input = LocalMmdInput {
                        source: &su,
                        labels: &ys,
                        example_weights: Some(&weights),
                        target: &tu,
                        pseudo_probabilities: &probs,
                        class_weights: &u,
                    };
                    match local_mmd_with_grad(&kernel, &input, true, exec) {
                        Ok(d) => {
                            for (i, g) in d.grad_source.iter().enumerate() {
                                let gz = through_normalization(g, &us[i].0, us[i].1);
                                accumulate_one(&mut dzs[i], &gz, config.mmd_weight);
                            }
                            for (j, g) in d.grad_target.iter().enumerate() {
                                let gz = through_normalization(g, &ut[j].0, ut[j].1);
                                accumulate_one(&mut dzt[j], &gz, config.mmd_weight);
                            }
                        }
                        // No class present on both sides of this batch pair.
                        Err(Error::DegenerateGeometry(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
                if let Some(h) = grads.hidden.as_mut() {
                    for (x, dz) in xs.iter().zip(&dzs) {
                        model.backprop_embedding(x, dz, h);
                    }
                    for (x, dz) in xt.iter().zip(&dzt) {
                        model.backprop_embedding(x, dz, h);
                    }
                }
                if grads.flat().iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteBatch { batch: step });
                }
            }
            sgd.step(&mut model, &grads, lr);
            step += 1;
        }

        let (s, t, m) = measure(&model)?;
        trajectory.push(TrajectoryPoint {
            epoch: epoch + 1,
            source_accuracy: s,
            target_accuracy: t,
            mmd: m,
            mean_example_weight: Some(weight_sum / n as f64),
            warning,
        });
    }
    Ok(SelfTrainOutcome {
        model,
        calibration,
        trajectory,
    })
}

fn accumulate(into: &mut [Vec<f64>], from: &[Vec<f64>], c: f64) {
    for (a, b) in into.iter_mut().zip(from) {
        accumulate_one(a, b, c);
    }
}

fn accumulate_one(into: &mut [f64], from: &[f64], c: f64) {
    for (x, y) in into.iter_mut().zip(from) {
        *x += c * y;
    }
}
