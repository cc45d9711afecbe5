//! Networks, training loop, checkpoints.

pub mod checkpoint;
pub mod config;
pub mod model;
pub mod train;

pub use config::{ConfigError, FeatureMode, PoolMode, RunConfig, TaskKind};
pub use model::{MeshForward, Network, ParamStore, PoolStage};
pub use train::{
    evaluate, infer, inference_pool_seed, network_from_checkpoint, train, EarlyStop, EpochMetrics,
    EvalReport, Inference, Prediction, SplitMetrics, TaskData, TrainReport,
};

use std::path::PathBuf;
use thiserror::Error;

/// Umbrella error for building, training and running networks.
#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] crate::data::dataset::DataError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Tensor(#[from] crate::autodiff::TensorError),
    #[error(transparent)]
    Pool(#[from] crate::pool::PoolError),
    #[error(transparent)]
    Topology(#[from] crate::topology::TopologyError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        path: PathBuf,
        label: u32,
        classes: usize,
    },
    #[error(
        "{path}: mesh has {edges} edges, below the first pool target's reachable band \
         (needs at least {minimum})"
    )]
    ResolutionBelowBand {
        path: PathBuf,
        edges: usize,
        minimum: usize,
    },
    #[error("dataset does not match the configuration: {0}")]
    DatasetMismatch(String),
    #[error("{path}: {source}")]
    Sample {
        path: PathBuf,
        #[source]
        source: Box<NetError>,
    },
}

impl NetError {
    /// Attaches the offending mesh's path to an error, unless it already
    /// carries one.
    pub fn for_sample(self, path: &std::path::Path) -> NetError {
        match self {
            e @ NetError::Sample { .. } => e,
            other => NetError::Sample {
                path: path.to_path_buf(),
                source: Box::new(other),
            },
        }
    }
}
