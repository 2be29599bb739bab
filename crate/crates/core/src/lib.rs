//! Mining and ranking negative statements for phrase-valued knowledge bases.
//!
//! The pipeline trains a compact triple scorer on positive triples with
//! contrastive corruptions, generates out-of-KB candidates by nearest-neighbor
//! phrase substitution, and ranks them either by classification score below a
//! per-relation threshold or by the gradient magnitude of a forced positive
//! label. Baseline samplers and an evaluation harness are included.

pub mod error;
pub mod eval;
pub mod kb;
pub mod candidates;
pub mod checkpoint;
pub mod rankers;
pub mod retrieval;
pub mod samplers;
pub mod scorer;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
