//! Mask-aware spatio-temporal graph-convolution encoder.
//!
//! Internally a batch of sequences is flattened into *instances* (one per
//! sample and active person) with layout `(N, C, T, V_max)`; persons are
//! averaged back together at pooling time.

mod block;
mod classifier;
mod encoder;
pub mod layers;
mod params;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use block::{block_backward, block_forward, stgcn_block, BlockCache, BN_MOMENTUM};
pub use classifier::{cross_entropy, linear_classify, softmax_rows, ClassifierGrad};
pub use encoder::{Batch, Encoder, EncoderOutput, ForwardCache, Mode};
pub use params::{
    BatchNormParams, BatchNormStats, BlockParams, BlockStats, EncoderBuffers, EncoderParams, Linear, Residual,
};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("convention mismatch: {0}")]
    ConventionMismatch(String),
    #[error("mini-batch mixes conventions `{0}` and `{1}`")]
    MixedConventions(String, String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StgcnConfig {
    pub block_channel_widths: Vec<usize>,
    /// Temporal stride per block; missing entries mean stride 1.
    pub strides: Vec<usize>,
    pub temporal_kernel: usize,
    pub embedding_dim: usize,
    pub projection_dim: usize,
    pub edge_importance: bool,
    pub dropout: f64,
}

impl Default for StgcnConfig {
    fn default() -> Self {
        Self {
            block_channel_widths: vec![32, 32, 64],
            strides: vec![1, 2, 2],
            temporal_kernel: 9,
            embedding_dim: 256,
            projection_dim: 128,
            edge_importance: true,
            dropout: 0.0,
        }
    }
}

impl StgcnConfig {
    /// Ten blocks of the standard ST-GCN backbone.
    pub fn full_scale() -> Self {
        let mut widths = vec![64; 4];
        widths.extend([128; 3]);
        widths.extend([256; 3]);
        Self {
            block_channel_widths: widths,
            strides: vec![1, 1, 1, 1, 2, 1, 1, 2, 1, 1],
            dropout: 0.5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetworkError::InvalidConfig(m));
        if self.block_channel_widths.is_empty() || self.block_channel_widths.contains(&0) {
            return bad("block_channel_widths must be non-empty and positive".into());
        }
        if self.temporal_kernel.is_multiple_of(2) {
            return bad(format!("temporal_kernel must be odd, got {}", self.temporal_kernel));
        }
        if self.strides.len() > self.block_channel_widths.len() || self.strides.contains(&0) {
            return bad("strides must be positive with at most one entry per block".into());
        }
        if self.embedding_dim == 0 || self.projection_dim == 0 {
            return bad("embedding_dim and projection_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}
