//! Momentum-contrast pretraining with cross-format positives and a single
//! memory bank shared by every skeleton format.

mod bank;
mod checkpoint;
mod loss;
mod optim;
mod pairs;
mod run;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bank::{MemoryBank, UNIT_TOLERANCE};
pub use checkpoint::{checkpoint_id, Checkpoint, CheckpointHeader, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{info_nce, info_nce_batch, info_nce_with_grad, BatchLoss};
pub use optim::{momentum_update, LrSchedule, Sgd};
pub use pairs::{format_pairs, iterations_per_epoch, make_positive_pair, prepare_view, ViewSpec};
pub use run::{pretrain_run, LogEntry, MoCoState, StepStats};

use crate::conventions::ConventionError;
use crate::dataio::{AugmentationConfig, DataError, Stream};
use crate::graph::GraphError;
use crate::network::{NetworkError, StgcnConfig};

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("batch of {batch} keys exceeds bank capacity {capacity}")]
    BankOverflow { batch: usize, capacity: usize },
    #[error("key {index} has norm {norm}, expected 1")]
    NonUnitKey { index: usize, norm: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("record `{record}` lacks format `{format}`")]
    MissingFormat { record: String, format: String },
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("invalid pretraining config: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("corrupt checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Convention(#[from] ConventionError),
}

pub type Result<T> = std::result::Result<T, PretrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    pub ema_momentum: f64,
    pub bank_size: usize,
    /// Every view is resampled to this many frames.
    pub frames: usize,
    pub stream: Stream,
    /// Translate each clip so the root joint starts at the origin.
    pub center: bool,
    pub strict_bank: bool,
    pub seed: u64,
    pub augmentation: AugmentationConfig,
    pub network: StgcnConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            lr: LrSchedule {
                base: 0.1,
                milestones: vec![40],
                decay: 0.1,
            },
            sgd_momentum: 0.9,
            weight_decay: 1e-4,
            temperature: 0.07,
            ema_momentum: 0.999,
            bank_size: 8192,
            frames: 50,
            stream: Stream::Joint,
            center: true,
            strict_bank: false,
            seed: 0,
            augmentation: AugmentationConfig::default(),
            network: StgcnConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn view(&self) -> ViewSpec {
        ViewSpec {
            frames: self.frames,
            stream: self.stream,
            center: self.center,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PretrainError::InvalidConfig(m));
        if self.batch_size == 0 || self.frames == 0 {
            return bad("batch_size and frames must be positive".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(PretrainError::InvalidTemperature(self.temperature));
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return bad(format!("ema_momentum {} outside [0, 1)", self.ema_momentum));
        }
        if self.bank_size < self.batch_size {
            return bad(format!("bank_size {} smaller than batch_size {}", self.bank_size, self.batch_size));
        }
        if !(self.lr.base > 0.0 && self.lr.decay > 0.0) || self.sgd_momentum < 0.0 || self.weight_decay < 0.0 {
            return bad("learning rate, decay, momentum and weight decay must be non-negative".into());
        }
        self.augmentation.validate()?;
        self.network.validate()?;
        Ok(())
    }
}
