//! Classifying ICU arrhythmia alarms as true or false from multi-channel
//! physiological waveforms.
//!
//! The pipeline turns the final 60 s of a record into Morlet scalograms,
//! splits them into consecutive chunks, encodes each chunk with a shared
//! convolutional encoder and reads the chunk sequence with a two-layer LSTM.
//! Hand-crafted features, a Pan-Tompkins beat detector and the evaluation
//! statistics (AUC, DeLong, bootstrap, stratified k-fold) live alongside.
//!
//! Modules, bottom-up:
//!
//! * [`records`]: record model, on-disk format, filtering, class weights, synthetic data
//! * [`scalogram`]: CWT engine and 64×64 normalized scalograms
//! * [`temporal`]: chunking and the per-chunk tensor sequence
//! * [`features`]: 103-feature catalogue, Pan-Tompkins, linear classifier
//! * [`net`]: encoder + LSTM + head, training loop, gradient checking, checkpoints
//! * [`stats`]: AUC, clinical metrics, folds, DeLong, bootstrap, error reports
//! * [`harness`]: experiment runs, sweeps, ablations and report emission

pub mod error;
pub mod features;
pub mod harness;
pub mod net;
pub mod records;
pub mod scalogram;
pub mod stats;
pub mod temporal;

pub use error::{Error, Result};
