//! Generalization-subset tooling for open-domain question answering.
//!
//! The pipeline: decompose questions into atoms ([`decompose`]), index the
//! training split and classify test questions into overlap, compositional
//! and novel-entity candidates ([`categorize`]), collect human verification
//! labels, then score externally produced predictions and retrievals per
//! subset ([`evaluate`], [`pattern`]) and build ablation inputs
//! ([`ablation`]).

pub mod ablation;
pub mod bins;
pub mod categorize;
pub mod data;
pub mod decompose;
pub mod error;
pub mod evaluate;
pub mod exec;
pub mod pattern;
pub mod report;
pub mod stem;
pub mod text;

pub use error::{Error, Result};
pub use categorize::Category;
pub use exec::Execution;
