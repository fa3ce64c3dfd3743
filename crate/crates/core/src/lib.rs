//! Out-of-context detection for image/caption pairs.
//!
//! Each record pairs one original news image with two captions. Both captions
//! are sanitized into generation-safe prompts, turned into synthetic images by
//! a text-to-image backend, and every image is embedded into a feature vector.
//! Cosine similarity between the embeddings drives an OOC/NOOC decision, which
//! the evaluation module scores against gold labels.
//!
//! Stage layout:
//!
//! - [`corpus`]: records, the line-delimited manifest, embedding cache, survey ratings
//! - [`sanitizer`]: entity-label substitution and blocked-content screening
//! - [`genclient`]: text-to-image backends, rate limiting, the resumable generation stage
//! - [`featurizer`]: encoder-only and detect-crop-combine embeddings
//! - [`similarity`]: cosine, SSIM and MSE kernels
//! - [`decision`]: the two thresholding rules
//! - [`evaluation`]: metrics, survey agreement, encoder x detector matrix
//! - [`pipeline`] and [`config`]: stage orchestration used by the CLI

pub mod config;
pub mod corpus;
pub mod decision;
pub mod evaluation;
pub mod featurizer;
pub mod genclient;
pub mod pipeline;
pub mod sanitizer;
pub mod similarity;
pub mod synth;

mod digest;

pub use corpus::{GeneratedImageRef, Label, Record, Status};
pub use decision::{DecisionConfig, DecisionMode, Prediction, SimilarityPair};
pub use evaluation::{ConfusionMatrix, MetricsReport, Ratio};
pub use featurizer::{EmbeddingVector, Featurizer, FeaturizerConfig};
