//! Multimodal gait recognition with sequential two-stream skeleton
//! refinement.
//!
//! The crate couples a silhouette encoder (framewise convolution, temporal
//! max pooling, horizontal pyramid pooling) with two skeleton-stream graph
//! encoders over joints and bones. Skeleton correction decoders, guided by
//! the silhouette feature and linked by cross-modal adapters, predict
//! residual coordinate adjustments whose refined streams are re-encoded
//! with shared weights and concatenated into the recognition feature.
//!
//! A procedural walking-sequence generator, a retrieval evaluator and a
//! deterministic training loop make the whole pipeline testable end to end
//! without external datasets.

pub mod archive;
pub mod config;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod nn;
pub mod refine;
pub mod seed;
pub mod skeleton;
pub mod synth;
pub mod topology;
pub mod train;

pub use error::{GaitError, Result};
