//! 3D human keypoint regression from sequences of depth-derived point clouds.
//!
//! The pipeline: raw depth frames are segmented into human-only point clouds,
//! each frame is partitioned into local volumes around farthest-point-sampled
//! reference points, per-volume displacements are lifted into features by a
//! shared point convolution, a transformer attends over all volume tokens of
//! the sequence, and an MLP head regresses 15 joint coordinates.
//!
//! Core numerics are generic over the scalar type ([`scalar::Scalar`], i.e.
//! `f32` or `f64`); training typically runs at `f32` while gradient-check
//! tests run at `f64`.

pub mod checkpoint;
pub mod cloud;
pub mod config;
pub mod data;
pub mod eval;
pub mod model;
pub mod plot;
pub mod preprocess;
pub mod scalar;
pub mod tensor;
pub mod tokenizer;
pub mod training;

use thiserror::Error;

/// Crate-wide error type. The CLI maps variants onto exit codes
/// (config -> 2, data -> 3, numeric -> 4).
#[derive(Debug, Error)]
pub enum SpikeError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SpikeError>;

/// Convenience aliases at fixed precision.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = tensor::Tape<f32>;
pub type Tape64 = tensor::Tape<f64>;
pub type PointCloud32 = cloud::PointCloud<f32>;
pub type PointCloud64 = cloud::PointCloud<f64>;
