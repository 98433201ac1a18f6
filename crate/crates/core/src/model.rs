//! The hyperspherical classifier head and its normalized softmax loss.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{argmax, dot, log_softmax, norm, softmax, ClassWeights};

pub const DEFAULT_SCALE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::invalid("activation", format!("unknown activation `{other}` (identity|tanh|relu)"))),
        }
    }
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - pre.tanh().powi(2),
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Bias-free hidden layer `z = act(H x)`, `H` stored row-major `width x input`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub input_dim: usize,
    pub width: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
}

impl HiddenLayer {
    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self {
            input_dim: dim,
            width: dim,
            activation: Activation::Identity,
            weights,
        }
    }

    pub fn random<R: Rng>(input_dim: usize, width: usize, activation: Activation, rng: &mut R) -> Self {
        let std = 1.0 / (input_dim as f64).sqrt();
        let weights = (0..input_dim * width)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            input_dim,
            width,
            activation,
            weights,
        }
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.weights.chunks_exact(self.input_dim).map(|row| dot(row, x)).collect()
    }
}

/// Class weights, the NSL scale `s`, and an optional hidden layer. There are
/// no bias terms anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypersphereModel {
    pub weights: ClassWeights,
    pub scale: f64,
    pub hidden: Option<HiddenLayer>,
}

/// Gradients laid out like the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<f64>,
    pub hidden: Option<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &HypersphereModel) -> Self {
        Self {
            weights: vec![0.0; model.weights.as_flat().len()],
            hidden: model.hidden.as_ref().map(|h| vec![0.0; h.weights.len()]),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (self.hidden.as_mut(), other.hidden.as_ref()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|g| *g *= factor);
        if let Some(h) = self.hidden.as_mut() {
            h.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        if let Some(h) = &self.hidden {
            v.extend_from_slice(h);
        }
        v
    }
}

impl HypersphereModel {
    /// Linear head with unit-norm, spherically distributed class directions.
    pub fn new_linear<R: Rng>(classes: usize, dim: usize, scale: f64, rng: &mut R) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid("scale", format!("{scale} must be > 0")));
        }
        let mut data = Vec::with_capacity(classes * dim);
        for _ in 0..classes {
            let col: Vec<f64> = loop {
                let c: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                if norm(&c) > 0.0 {
                    break c;
                }
            };
            let n = norm(&col);
            data.extend(col.into_iter().map(|v| v / n));
        }
        Ok(Self {
            weights: ClassWeights::from_flat(classes, dim, data)?,
            scale,
            hidden: None,
        })
    }

    /// Head on top of a hidden layer; the class directions live in the
    /// hidden space.
    pub fn new_hidden<R: Rng>(
        classes: usize,
        input_dim: usize,
        hidden: HiddenLayer,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.input_dim != input_dim || hidden.weights.len() != hidden.width * input_dim {
            return Err(Error::DimensionMismatch {
                expected: input_dim,
                found: hidden.input_dim,
            });
        }
        let mut model = Self::new_linear(classes, hidden.width, scale, rng)?;
        model.hidden = Some(hidden);
        Ok(model)
    }

    pub fn classes(&self) -> usize {
        self.weights.classes()
    }

    /// Dimension of the raw input features.
    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().map_or(self.weights.dim(), |h| h.input_dim)
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// The feature the class directions are compared against.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        match &self.hidden {
            None => x.to_vec(),
            Some(h) => h.pre_activation(x).into_iter().map(|v| h.activation.apply(v)).collect(),
        }
    }

    /// Cosines of the embedded feature against every class. An embedding
    /// that is exactly zero (possible behind a ReLU) has no direction and
    /// yields all-zero cosines.
    pub fn cosines(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let z = self.embed(x);
        let zn = norm(&z);
        if zn == 0.0 {
            return Ok(vec![0.0; self.classes()]);
        }
        self.weights
            .columns()
            .enumerate()
            .map(|(k, w)| {
                let wn = norm(w);
                if wn == 0.0 {
                    return Err(Error::ZeroNorm(format!("weight column {k}")));
                }
                Ok(dot(&z, w) / (zn * wn))
            })
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.cosines(x)?.into_iter().map(|c| self.scale * c).collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.cosines(x)?))
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn param_count(&self) -> usize {
        self.weights.as_flat().len() + self.hidden.as_ref().map_or(0, |h| h.weights.len())
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = self.weights.as_flat().to_vec();
        if let Some(h) = &self.hidden {
            v.extend_from_slice(&h.weights);
        }
        v
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        let nw = self.weights.as_flat().len();
        self.weights.as_flat_mut().copy_from_slice(&params[..nw]);
        if let Some(h) = self.hidden.as_mut() {
            h.weights.copy_from_slice(&params[nw..]);
        }
    }

    /// Pulls a gradient with respect to the embedding `z = embed(x)` back to
    /// the hidden-layer weights, accumulating into `out`.
    pub fn backprop_embedding(&self, x: &[f64], dz: &[f64], out: &mut [f64]) {
        let Some(h) = &self.hidden else { return };
        let pre = h.pre_activation(x);
        for (j, (&p, &g)) in pre.iter().zip(dz).enumerate() {
            let d = g * h.activation.derivative(p);
            if d == 0.0 {
                continue;
            }
            let row = &mut out[j * h.input_dim..(j + 1) * h.input_dim];
            for (o, xi) in row.iter_mut().zip(x) {
                *o += d * xi;
            }
        }
    }
}

/// A minibatch: features, labels, optional per-example weights, and the
/// batch position reported in errors.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub features: Vec<&'a [f64]>,
    pub labels: Vec<usize>,
    pub weights: Option<Vec<f64>>,
    pub index: usize,
}

impl<'a> Batch<'a> {
    pub fn new(features: Vec<&'a [f64]>, labels: Vec<usize>) -> Self {
        Self {
            features,
            labels,
            weights: None,
            index: 0,
        }
    }
}

/// Normalized softmax loss `-mean log softmax(s cos theta)_y` and its
/// gradient with respect to the class weights and the hidden layer.
///
/// With per-example weights `d_i` the loss is `sum d_i l_i / sum d_i`.
pub fn nsl_loss_and_grad(model: &HypersphereModel, batch: &Batch<'_>, exec: Exec) -> Result<(f64, Gradients)> {
    let n = batch.features.len();
    if n == 0 {
        return Err(Error::Empty("batch".into()));
    }
    if batch.labels.len() != n {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: n,
            found: batch.labels.len(),
        });
    }
    let classes = model.classes();
    for &y in &batch.labels {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
    }
    for x in &batch.features {
        model.check_input(x)?;
    }
    let total_weight = match &batch.weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::LengthMismatch {
                    what: "example weights",
                    expected: n,
                    found: w.len(),
                });
            }
            let t: f64 = w.iter().sum();
            if t.is_nan() || t <= 0.0 {
                return Err(Error::invalid("example weights", "must have a positive sum"));
            }
            t
        }
        None => n as f64,
    };

    let dim = model.weights.dim();
    let wnorms: Vec<f64> = model.weights.columns().map(norm).collect();
    if let Some(k) = wnorms.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroNorm(format!("weight column {k}")));
    }
    let dirs: Vec<Vec<f64>> = model
        .weights
        .columns()
        .zip(&wnorms)
        .map(|(w, &wn)| w.iter().map(|v| v / wn).collect())
        .collect();

    let (loss, grads) = exec.chunked_sum(
        n,
        || (0.0f64, Gradients::zeros_like(model)),
        |range, (loss, g)| {
            let mut dz = vec![0.0; dim];
            for i in range {
                let x = batch.features[i];
                let y = batch.labels[i];
                let weight = batch.weights.as_ref().map_or(1.0, |w| w[i]);
                let z = model.embed(x);
                let zn = norm(&z);
                if zn == 0.0 {
                    // Directionless embedding: uniform prediction, no gradient.
                    *loss += weight * (classes as f64).ln();
                    continue;
                }
                let u: Vec<f64> = z.iter().map(|v| v / zn).collect();
                let cos: Vec<f64> = dirs.iter().map(|v| dot(&u, v)).collect();
                let logits: Vec<f64> = cos.iter().map(|c| model.scale * c).collect();
                let logp = log_softmax(&logits);
                *loss -= weight * logp[y];
                dz.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..classes {
                    let p = logp[k].exp();
                    let gk = weight * model.scale * (p - if k == y { 1.0 } else { 0.0 });
                    let wk = &mut g.weights[k * dim..(k + 1) * dim];
                    for j in 0..dim {
                        wk[j] += gk * (u[j] - cos[k] * dirs[k][j]) / wnorms[k];
                        dz[j] += gk * (dirs[k][j] - cos[k] * u[j]) / zn;
                    }
                }
                if let Some(h) = g.hidden.as_mut() {
                    model.backprop_embedding(x, &dz, h);
                }
            }
        },
        |(tl, tg), (l, g)| {
            *tl += l;
            tg.add_assign(&g);
        },
    );
    let (loss, mut grads) = (loss / total_weight, grads);
    grads.scale(1.0 / total_weight);
    if !loss.is_finite() || grads.weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteBatch { batch: batch.index });
    }
    Ok((loss, grads))
}
