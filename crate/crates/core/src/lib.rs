//! Multi-skeleton contrastive pretraining for skeleton-based action recognition.

pub mod conventions;
pub mod graph;
pub mod dataio;
pub mod network;
pub mod pretrain;
pub mod evalkit;
pub mod config;
