//! Consensus-based relabeling of noisy three-way review feedback.
//!
//! Raw Accept/Reject/Ignore feedback is turned into a clean binary training
//! set in four steps: train sub-models on training sets doped with Ignore
//! samples at increasing ratios ([`doping`], [`classifier`]), pick the member
//! subset and fusion rule that intercepts the most per false interception on
//! a small gold anchor set ([`ensemble`], [`search`]), relabel the raw corpus
//! with that cleaner ([`relabel`]), and train the final model on the balanced
//! result ([`pipeline`]).

pub mod classifier;
pub mod corpus;
pub mod doping;
pub mod ensemble;
pub mod pipeline;
pub mod relabel;
pub mod search;
pub mod synth;
