//! Delirium-risk modelling from ambient ICU noise and light streams.
//!
//! The crate is organised as a linear pipeline:
//!
//! * [`ingest`] parses sensor and label CSV files.
//! * [`features`] splits streams into day/night periods and computes the
//!   seven per-period level statistics (Lmax, Lmin, L99, L90, L50, L10, L1).
//! * [`cohort`] performs the patient-level train/test split, per-source
//!   min-max scaling and zero-padded sequence assembly.
//! * [`nets`] holds the three sequence classifiers (two-layer 1-D CNN, LSTM,
//!   GRU) with hand-written reverse-mode gradients, Adam training and
//!   patient-grouped cross-validation.
//! * [`eval`] computes classification metrics with percentile-bootstrap
//!   confidence intervals.
//! * [`explain`] computes exact and permutation-sampled Shapley attributions
//!   and their per-feature, per-modality and per-day aggregations.
//! * [`stats`] has the descriptive and inferential statistics (t-tests,
//!   quartile summaries, length-of-stay histograms).
//! * [`synth`] generates synthetic cohorts with a planted signal.
//! * [`cli`] wires everything into the `ambient-risk` executable.
//!
//! Data-parallel loops (bootstrap resamples, coalition evaluation,
//! cross-validation folds) go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise. Results are
//! always collected in index order, so output does not depend on the number
//! of worker threads.

pub mod cli;
pub mod cohort;
pub mod eval;
pub mod explain;
pub mod features;
pub mod ingest;
pub mod nets;
pub mod par;
pub mod stats;
pub mod svg;
pub mod synth;

/// Number of timesteps (ICU days) every patient sequence is padded to.
pub const SEQ_LEN: usize = 7;
