//! Intention-aware sticker retrieval.
//!
//! A conversation context is enriched with commonsense inferences and encoded;
//! a softmax head predicts the speaker's intention, whose label embedding is
//! matched by cosine against relation-aware sticker vectors. Sticker vectors
//! pool visual regions with weights derived from cross-attention between
//! the regions and keyword descriptions of the sticker's gesture, posture,
//! facial expression and caption.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the command-line tools.

pub mod cache;
pub mod config;
pub mod context;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod intention;
pub mod knowledge;
pub mod linalg;
pub mod matcher;
pub mod metrics;
pub mod pipeline;
pub mod remote;
pub mod scalar;
pub mod synthetic;
pub mod text;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model = matcher::Model<f64>;
pub type Model32 = matcher::Model<f32>;
pub type Checkpoint = matcher::Checkpoint<f64>;
pub type FeatureSpace = matcher::FeatureSpace<f64>;
pub type QueryFeatures = matcher::QueryFeatures<f64>;
pub type StickerFeatures = matcher::StickerFeatures<f64>;
pub type FusionParameters = fusion::FusionParameters<f64>;
pub type IntentionHead = intention::IntentionHead<f64>;
pub type Matrix = linalg::Matrix<f64>;
