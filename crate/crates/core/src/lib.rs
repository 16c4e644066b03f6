//! Inference of a community's UTC offset from the daily rhythm of its activity.
//!
//! The pipeline bins activity events into hourly series ([`ingest`]), removes slow
//! trends ([`preprocess`]), extracts circadian features ([`features`]) and maps them to
//! a UTC offset with one of six methods ([`infer`]). [`eval`] runs the repeated
//! stratified evaluation and data-scarcity sweeps, [`analyze`] covers longitudinal
//! platform statistics and the population deconvolution, and [`synth`] generates
//! labeled corpora with a known answer.

pub mod analyze;
pub mod circular;
pub mod error;
pub mod eval;
pub mod features;
pub mod infer;
pub mod ingest;
pub mod io;
pub mod preprocess;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use features::{
    extract_features, CommunityFeatures, FeatureConfig, HourlyProfile, RhythmFeatures,
    ScalarFeatures, SmoothedProfile,
};
pub use infer::{Method, OffsetPrediction, ReferencePool};
pub use ingest::{Event, GroundTruthLabel, LabeledCorpus};
pub use preprocess::{ActivitySeries, DetrendConfig, Stage};
