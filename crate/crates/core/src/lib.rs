//! Dataset attribute analysis for choosing small CNN configurations.
//!
//! The crate measures how hard a dataset is to classify from embedding vectors
//! (intra- and inter-class cosine similarity), how large its objects are
//! relative to the image, and what a convolutional stack costs to run. The
//! [`selection`] module strings these together into class-grouping, color-mode
//! and resolution procedures whose outcome is a minimum layer count and FLOP
//! estimate.
//!
//! Similarity code is generic over the [`Scalar`] element type (`f32` or
//! `f64`); the aliases below fix it to `f64`, which is what the CLI uses.

pub mod attributes;
pub mod error;
pub mod flops;
pub mod grouping;
pub mod io;
pub mod scalar;
pub mod selection;
pub mod similarity;
pub mod synth;

pub use attributes::{min_layers, object_scale, receptive_field, scale_stats, BBoxAnnotation, ScaleStats};
pub use error::{Error, Result};
pub use flops::{conv_flops, model_flops, resolution_sweep, ColorMode, ConvLayerSpec, FlopsReport, ModelSpec};
pub use grouping::ClassGrouping;
pub use scalar::Scalar;
pub use io::LockedLog;
pub use selection::{ColorChoice, ConfigKey, Procedure, Recommendation, Thresholds};
pub use similarity::{cosine, inter_class, intra_class, pearson, similarity_report};

pub type EmbeddingSet = similarity::EmbeddingSet<f64>;
pub type EmbeddingSet32 = similarity::EmbeddingSet<f32>;
pub type SimilarityReport = similarity::SimilarityReport<f64>;
pub type SimilarityReport32 = similarity::SimilarityReport<f32>;
pub type ClassSimilarityStats = similarity::ClassSimilarityStats<f64>;
pub type DecisionLog = selection::DecisionLog<f64>;
pub type LogEntry = selection::LogEntry<f64>;
pub type ColorDecision = selection::ColorDecision<f64>;
pub type LadderOutcome = selection::LadderOutcome<f64>;
