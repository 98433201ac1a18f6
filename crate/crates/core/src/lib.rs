//! Angular Gap example difficulty on a learned hypersphere.
//!
//! The crate trains a small normalized-softmax head on fixed embeddings,
//! scores each example by its Angular Gap (cosine to the label class minus
//! the best competing cosine), sharpens those scores with global or
//! class-wise post-hoc calibration, and feeds them to curriculum schedules
//! and a curricular domain-adaptation loop.
//!
//! Data-parallel work goes through [`Exec`]; with the `parallel` feature
//! (default) it fans out over rayon, otherwise everything runs on the
//! calling thread. Reductions use fixed chunking so both modes give
//! bit-identical results.

pub mod calibration;
pub mod curriculum;
pub mod data;
pub mod domain;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod scoring;
pub mod trainer;

pub use calibration::{CalibrationKind, CalibrationParams};
pub use data::dataset::{EmbeddingDataset, Example};
pub use error::{Error, Result};
pub use exec::Exec;
pub use geometry::{AngleProfile, ClassWeights, FeatureVector};
pub use model::HypersphereModel;
pub use scoring::{DifficultyRecord, DifficultyReport};
pub use trainer::{CurriculumSchedule, LearningDynamics, TrainConfig};
