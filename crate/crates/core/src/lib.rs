//! Stochastic batch acquisition for pool-based active learning.
//!
//! The usual deep active learning recipe scores every pool candidate once,
//! then labels the top B scorers as a batch. That treats a score snapshot as
//! if it stayed valid across the whole batch, which it does not: informative
//! points are informative about each other, so the top of a single ranking
//! is full of near-duplicates. This crate implements the cheap alternative
//! of sampling the batch from a distribution derived from the scores
//! (softmax, power, or soft-rank shaped; see [`sampling`]), plus everything
//! needed to run the comparison end to end: uncertainty scores over ensemble
//! predictions ([`scoring`]), a small deep-ensemble MLP classifier
//! ([`model`]), synthetic dataset generators and CSV I/O ([`datasets`]), the
//! active-learning loop and its experiment records ([`active`]), and
//! analysis helpers for rank decay, frozen-score replay, and acquisition
//! timing ([`diagnostics`]).
//!
//! Randomness is fully deterministic given a seed. Every consumer derives a
//! labeled stream from [`rng::RngState`], so results are reproducible
//! byte for byte and logically-parallel draws (e.g. the noise shared by two
//! policies at the same step) coincide by construction.

pub mod active;
pub mod datasets;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod scoring;

pub use error::{Error, Result};
