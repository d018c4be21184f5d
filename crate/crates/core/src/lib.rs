//! Docstring extraction, code-comment inconsistency detection and
//! replacement-docstring generation.
//!
//! The pipeline is split into independent stages:
//!
//! - [`extract`] parses source files and pairs each function with its
//!   documentation comment.
//! - [`corpus`] builds labeled (comment, method) pair datasets, including the
//!   post-hoc labeling of before/after edit records and hard-negative mining.
//! - [`tokenize`] is a byte-level BPE vocabulary shared by code and text.
//! - [`model`] is a compact transformer run in unimodal, cross and
//!   prefix-causal masking modes with separate task heads.
//! - [`train`] implements the contrastive, classification and generation
//!   objectives and the joint training loop.
//! - [`detect`] is the end-user check pipeline.
//! - [`eval`] holds metrics and classical baselines.

pub mod corpus;
pub mod detect;
pub mod eval;
pub mod extract;
pub mod language;
pub mod model;
pub mod synthetic;
pub mod tokenize;
pub mod train;

pub use language::LanguageId;
