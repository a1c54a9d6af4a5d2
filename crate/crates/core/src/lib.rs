//! Lightweight driver-activity classifiers found by distillation-guided
//! architecture search.
//!
//! The crate covers three phases and the tooling around them:
//!
//! 1. a teacher trained progressively, one backbone stage at a time, with
//!    an extra stage over the concatenated stage descriptors
//!    ([`train::train_teacher_progressive`]);
//! 2. a supernet holding every pyramidal-convolution candidate, trained
//!    against the frozen teacher while learning its mixing weights, and
//!    pruned to the most probable candidate per block ([`train::run_search`],
//!    [`arch::derive_architecture`]);
//! 3. knowledge transfer into the derived student ([`train::run_transfer`]).
//!
//! [`analyzer`] counts parameters and multiply–accumulates of any
//! [`arch::ArchitectureSpec`]; [`data`] generates and loads datasets.

pub mod analyzer;
pub mod arch;
pub mod data;
mod error;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
