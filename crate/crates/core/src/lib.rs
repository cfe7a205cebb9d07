//! Gesture recognition from body-worn passive RFID tags.
//!
//! The crate covers the full path from raw reader logs to classified
//! gestures, with the missing-data handling that body-worn tags require:
//!
//! - [`ingest`]: log and manifest parsing, EPC-sorted dataframes.
//! - [`preprocess`]: phase unwrapping, MAD phase normalization, S-G and
//!   Gaussian smoothing, Min-Max RSS normalization, zero padding.
//! - [`interp`]: linear (phase) and exponential (RSS) gap filling plus
//!   resampling onto a common grid.
//! - [`impute`]: null-dataframe repair from within-class neighbors with
//!   proximity-pair fallback.
//! - [`graph`]: feature tensors and directed temporal K-NN graphs.
//! - [`gnn`]: the attention-based graph convolutional classifier, trained
//!   with explicit reverse-mode gradients.
//! - [`synth`]: a multipath backscatter channel simulator that generates
//!   labeled datasets in the same log format the ingest stage reads.
//! - [`eval`] and [`pipeline`]: metrics, splits, misdetection statistics,
//!   and the experiment drivers (runs, leave-one-person-out, tag ablations,
//!   parameter sweeps).

pub mod config;
pub mod eval;
pub mod gnn;
pub mod graph;
pub mod impute;
pub mod ingest;
pub mod interp;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
pub mod types;

pub use types::{Dataframe, Environment, FrameStatus, GestureSample, ProcessedGesture, Reading};
