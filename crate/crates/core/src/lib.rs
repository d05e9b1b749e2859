//! Online learning over haphazard input streams.
//!
//! A haphazard stream delivers one labelled instance at a time, and each
//! instance carries an arbitrary subset of features: features go missing,
//! appear for the first time mid-stream, or silently stop arriving. This
//! crate provides
//!
//! * the data model for such streams ([`feature_space`]),
//! * loaders and a seeded availability-masking simulator ([`streamgen`]),
//! * streaming and cross-model evaluation metrics ([`metrics`]),
//! * seven online learners ([`learners`]),
//! * a prequential benchmark harness with grid search ([`bench`]).

pub mod bench;
pub mod config;
pub mod feature_space;
pub mod learners;
pub mod metrics;
pub mod streamgen;

pub use feature_space::{FeatureDisposition, FeatureId, FeatureRegistry, FeatureUniverse, HaphazardInstance};
pub use learners::{LearnerError, OnlineLearner, Prediction};
pub use metrics::{MetricAccumulator, MetricsReport};
