//! Measures how strongly a trained network's internal representation
//! "closes" fragmented contours: renders triangle-fragment probe images,
//! trains small conv/dense nets on various corpora, embeds the probes,
//! and scores closure as a cosine-similarity contrast over matched
//! image triples.

pub mod closure;
pub mod data;
pub mod experiments;
pub mod nn;
pub mod rng;
pub mod stats;
pub mod stimulus;
pub mod train;

pub use closure::{closure_curve, closure_per_triple, cosine, embed_stimuli, CiMethod, ClosureCurve, ClosureRecord};
pub use experiments::{ExperimentName, ExperimentPlan};
pub use data::{AugmentationConfig, Dataset, Normalizer, Provenance, StimulusTask};
pub use nn::{build_network, Head, NetConfig, NetKind, Network, Tensor};
pub use stimulus::{Background, Condition, Image, Position, StimulusSpec, Triple};
pub use train::{evaluate, train, EpochRow, TrainConfig, TrainReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid stimulus spec: {0}")]
    InvalidSpec(String),
    #[error("triple assignment failed after {restarts} restarts: {reason}")]
    TripleAssignment { restarts: usize, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown layer {name:?}; valid layers: {valid:?}")]
    UnknownLayer { name: String, valid: Vec<String> },
    #[error("invalid network config: {0}")]
    NetConfig(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("unbalanced design: {0}")]
    Unbalanced(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("experiment error: {0}")]
    Experiment(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    FileFormat { path: std::path::PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<std::path::PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
