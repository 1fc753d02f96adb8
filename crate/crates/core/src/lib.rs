//! Building blocks for phenotyping experiments on synthetic EHR cohorts.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`rule`] — a boolean DSL over medical-code predicates; definitions are
//!   parsed, printed canonically, evaluated against patient records, and
//!   mined for their distinct atoms (oracle features).
//! * [`cohort`] — synthetic patient generation, label derivation, multi-hot
//!   encoding, and stratified train/validation/test splitting.
//! * [`nnet`] — a feed-forward engine with a shared trunk and one sigmoid
//!   head per task (single-task nets are the one-head case), trained with
//!   Adam, batch normalization, and best-epoch selection.
//! * [`logreg`] — an L1-regularized logistic-regression baseline solved by
//!   proximal gradient descent.
//! * [`metrics`] — precision-recall and ROC evaluation for imbalanced
//!   binary tasks.
//! * [`complexity`] — combination histograms over a definition's oracle
//!   features, with entropy and smoothed KL divergence.
//!
//! Everything is deterministic given its inputs and seeds; no function here
//! performs IO. The crate builds without `std` (allocation is required).

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod cohort;
pub mod complexity;
pub mod logreg;
pub mod metrics;
pub mod nnet;
pub mod rule;

mod math;
mod rng;
