use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::geometry::norm;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub label: usize,
    pub features: Vec<f64>,
}

/// Labeled embeddings, optionally annotated with human selection frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    examples: Vec<Example>,
    classes: usize,
    dim: usize,
    hsf: BTreeMap<String, f64>,
}

impl EmbeddingDataset {
    pub fn new(examples: Vec<Example>, classes: usize) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::Empty("dataset has no examples".into()))?;
        if classes < 2 {
            return Err(Error::invalid("classes", format!("need at least 2 classes, got {classes}")));
        }
        let dim = first.features.len();
        if dim < 2 {
            return Err(Error::invalid("features", format!("dimension {dim} < 2")));
        }
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::DuplicateId(ex.id.clone()));
            }
            if ex.label >= classes {
                return Err(Error::LabelOutOfRange {
                    label: ex.label,
                    classes,
                });
            }
            if ex.features.len() != dim {
                return Err(Error::InconsistentDimension {
                    first_id: first.id.clone(),
                    first_dim: dim,
                    id: ex.id.clone(),
                    dim: ex.features.len(),
                });
            }
            if ex.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("features of `{}`", ex.id)));
            }
            if norm(&ex.features) == 0.0 {
                return Err(Error::ZeroNorm(format!("feature vector `{}`", ex.id)));
            }
        }
        Ok(Self {
            examples,
            classes,
            dim,
            hsf: BTreeMap::new(),
        })
    }

    /// Like [`EmbeddingDataset::new`] but infers the class count as
    /// `max(label) + 1` (at least 2).
    pub fn from_examples(examples: Vec<Example>) -> Result<Self> {
        let classes = examples.iter().map(|e| e.label + 1).max().unwrap_or(0).max(2);
        Self::new(examples, classes)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn hsf(&self) -> &BTreeMap<String, f64> {
        &self.hsf
    }

    /// Attaches human-selection-frequency values by id. Values for unknown
    /// ids are dropped; their ids are returned as warnings.
    pub fn attach_hsf(&mut self, hsf: &BTreeMap<String, f64>) -> Vec<String> {
        let ids: HashSet<&str> = self.examples.iter().map(|e| e.id.as_str()).collect();
        let mut unmatched = Vec::new();
        for (id, &v) in hsf {
            if ids.contains(id.as_str()) {
                self.hsf.insert(id.clone(), v);
            } else {
                unmatched.push(id.clone());
            }
        }
        unmatched
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let examples: Vec<Example> = indices.iter().map(|&i| self.examples[i].clone()).collect();
        let mut out = Self::new(examples, self.classes)?;
        out.hsf = out
            .examples
            .iter()
            .filter_map(|e| self.hsf.get(&e.id).map(|&v| (e.id.clone(), v)))
            .collect();
        Ok(out)
    }

    /// Seeded random split; the holdout receives `round(fraction * N)`
    /// examples (at least one, at most N - 1). Both halves keep dataset order.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::invalid("holdout fraction", format!("{fraction} not in (0, 1)")));
        }
        if self.len() < 2 {
            return Err(Error::invalid("dataset", "need at least 2 examples to split"));
        }
        let n = self.len();
        let take = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::stream(seed, Stream::Split));
        let mut hold: Vec<usize> = idx[..take].to_vec();
        let mut train: Vec<usize> = idx[take..].to_vec();
        hold.sort_unstable();
        train.sort_unstable();
        Ok((self.subset(&train)?, self.subset(&hold)?))
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.examples.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect()
    }
}

/// Fails when the two datasets share any example id.
pub fn check_disjoint(train: &EmbeddingDataset, holdout: &EmbeddingDataset) -> Result<()> {
    let ids: HashSet<&str> = train.examples().iter().map(|e| e.id.as_str()).collect();
    let shared: Vec<&str> = holdout
        .examples()
        .iter()
        .map(|e| e.id.as_str())
        .filter(|id| ids.contains(id))
        .collect();
    match shared.first() {
        None => Ok(()),
        Some(first) => Err(Error::IdOverlap {
            count: shared.len(),
            example: first.to_string(),
        }),
    }
}
