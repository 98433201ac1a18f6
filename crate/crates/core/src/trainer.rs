//! Minibatch SGD training of the hyperspherical head, with optional paced
//! loading and per-epoch forgetting-event tracking.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::curriculum::PacingFunction;
use crate::data::dataset::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{nsl_loss_and_grad, Activation, Batch, Gradients, HiddenLayer, HypersphereModel, DEFAULT_SCALE};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Annealing {
    Cosine,
    Constant,
}

impl std::fmt::Display for Annealing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Annealing::Cosine => "cosine",
            Annealing::Constant => "constant",
        })
    }
}

impl std::str::FromStr for Annealing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Annealing::Cosine),
            "constant" => Ok(Annealing::Constant),
            other => Err(Error::invalid("annealing", format!("unknown schedule `{other}` (cosine|constant)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenSpec {
    pub width: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub annealing: Annealing,
    pub momentum: f64,
    pub weight_decay: f64,
    pub scale: f64,
    pub hidden: Option<HiddenSpec>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            learning_rate: 0.1,
            annealing: Annealing::Cosine,
            momentum: 0.9,
            weight_decay: 5e-4,
            scale: DEFAULT_SCALE,
            hidden: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must lie in [0, 1)"));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay", "must be >= 0"));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid("scale", "must be > 0"));
        }
        Ok(())
    }

    /// Learning rate for `epoch` of `epochs`: `lr0 (1 + cos(pi t / T)) / 2`
    /// under cosine annealing.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.annealing {
            Annealing::Constant => self.learning_rate,
            Annealing::Cosine => {
                self.learning_rate * (1.0 + (PI * epoch as f64 / self.epochs as f64).cos()) / 2.0
            }
        }
    }

    pub fn init_model(&self, classes: usize, dim: usize) -> Result<HypersphereModel> {
        let mut rng = rng::stream(self.seed, Stream::Init);
        match self.hidden {
            None => HypersphereModel::new_linear(classes, dim, self.scale, &mut rng),
            Some(h) => {
                let layer = if h.activation == Activation::Identity && h.width == dim {
                    HiddenLayer::identity(dim)
                } else {
                    HiddenLayer::random(dim, h.width, h.activation, &mut rng)
                };
                HypersphereModel::new_hidden(classes, dim, layer, self.scale, &mut rng)
            }
        }
    }
}

/// Paced loading: a fixed easy-to-hard order plus linear pacing `(a, b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub a: f64,
    pub b: f64,
    /// Example ids, easiest first. Must be a permutation of the dataset ids.
    pub order: Vec<String>,
}

/// Per-example learning dynamics, in dataset order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LearningDynamics {
    pub forgetting: Vec<u32>,
    pub last_correct: Vec<bool>,
    evaluations: usize,
}

impl LearningDynamics {
    pub fn new(n: usize) -> Self {
        Self {
            forgetting: vec![0; n],
            last_correct: vec![false; n],
            evaluations: 0,
        }
    }

    /// Folds in one full-set evaluation; a forgetting event is a
    /// correct-to-incorrect transition since the previous evaluation.
    pub fn record(&mut self, correct: &[bool]) {
        if self.evaluations > 0 {
            for ((f, &was), &now) in self.forgetting.iter_mut().zip(&self.last_correct).zip(correct) {
                if was && !now {
                    *f += 1;
                }
            }
        }
        self.last_correct.copy_from_slice(correct);
        self.evaluations += 1;
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub visible: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: HypersphereModel,
    pub dynamics: LearningDynamics,
    pub history: Vec<EpochRecord>,
}

/// Heavy-ball SGD; L2 weight decay acts on the raw parameters.
#[derive(Debug, Clone)]
pub struct Sgd {
    velocity: Vec<f64>,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn new(model: &HypersphereModel, momentum: f64, weight_decay: f64) -> Self {
        Self {
            velocity: vec![0.0; model.param_count()],
            momentum,
            weight_decay,
        }
    }

    pub fn step(&mut self, model: &mut HypersphereModel, grads: &Gradients, lr: f64) {
        let mut params = model.params_flat();
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads.flat()) {
            let g = g + self.weight_decay * *p;
            *v = self.momentum * *v + g;
            *p -= lr * *v;
        }
        model.set_params_flat(&params);
    }
}

/// Per-example correctness of the model's argmax prediction.
pub fn correctness(model: &HypersphereModel, dataset: &EmbeddingDataset, exec: Exec) -> Result<Vec<bool>> {
    let ex = dataset.examples();
    exec.try_map(ex.len(), |i| Ok::<_, Error>(model.predict(&ex[i].features)? == ex[i].label))
}

pub fn accuracy(model: &HypersphereModel, dataset: &EmbeddingDataset, exec: Exec) -> Result<f64> {
    let c = correctness(model, dataset, exec)?;
    Ok(c.iter().filter(|&&v| v).count() as f64 / c.len() as f64)
}

fn resolve_order(dataset: &EmbeddingDataset, order: &[String]) -> Result<Vec<usize>> {
    if order.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            what: "curriculum order",
            expected: dataset.len(),
            found: order.len(),
        });
    }
    let index = dataset.index_of();
    let mut seen = vec![false; dataset.len()];
    order
        .iter()
        .map(|id| {
            let &i = index.get(id.as_str()).ok_or_else(|| Error::MissingScore {
                measure: "curriculum order".into(),
                id: id.clone(),
            })?;
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::DuplicateId(id.clone()));
            }
            Ok(i)
        })
        .collect()
}

/// Trains a fresh model. With a schedule, epoch `e` (0-based) draws from the
/// `g(e + 1)` easiest examples, i.e. the pool reached by the end of that
/// epoch on a clock of `epochs` iterations. The visible pool is shuffled in
/// dataset order so a schedule that exposes everything reproduces unpaced
/// training exactly.
pub fn train(
    dataset: &EmbeddingDataset,
    config: &TrainConfig,
    schedule: Option<&CurriculumSchedule>,
    exec: Exec,
) -> Result<TrainOutcome> {
    config.validate()?;
    let n = dataset.len();
    let mut model = config.init_model(dataset.classes(), dataset.dim())?;
    let pacing = match schedule {
        Some(s) => Some((
            PacingFunction::new(s.a, s.b, n, config.epochs as f64)?,
            resolve_order(dataset, &s.order)?,
        )),
        None => None,
    };

    let mut shuffle_rng = rng::stream(config.seed, Stream::Shuffle);
    let mut sgd = Sgd::new(&model, config.momentum, config.weight_decay);
    let mut dynamics = LearningDynamics::new(n);
    let mut history = Vec::with_capacity(config.epochs);
    let examples = dataset.examples();
    let mut batch_index = 0usize;

    for epoch in 0..config.epochs {
        let mut visible: Vec<usize> = match &pacing {
            None => (0..n).collect(),
            Some((p, order)) => {
                let mut v = order[..p.size_at((epoch + 1) as f64)].to_vec();
                v.sort_unstable();
                v
            }
        };
        if visible.is_empty() {
            return Err(Error::Empty(format!("visible subset at epoch {epoch}")));
        }
        visible.shuffle(&mut shuffle_rng);
        let lr = config.learning_rate_at(epoch);
        let mut loss_sum = 0.0;
        for chunk in visible.chunks(config.batch_size) {
            let mut batch = Batch::new(
                chunk.iter().map(|&i| examples[i].features.as_slice()).collect(),
                chunk.iter().map(|&i| examples[i].label).collect(),
            );
            batch.index = batch_index;
            batch_index += 1;
            let (loss, grads) = nsl_loss_and_grad(&model, &batch, exec)?;
            loss_sum += loss * chunk.len() as f64;
            sgd.step(&mut model, &grads, lr);
        }
        let correct = correctness(&model, dataset, exec)?;
        dynamics.record(&correct);
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / visible.len() as f64,
            train_accuracy: correct.iter().filter(|&&c| c).count() as f64 / n as f64,
            visible: visible.len(),
            learning_rate: lr,
        });
    }
    Ok(TrainOutcome {
        model,
        dynamics,
        history,
    })
}
