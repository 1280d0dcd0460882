//! Single-fact question answering over a knowledge base.
//!
//! A question is answered in three steps: a BiGRU-CRF labeler marks the subject
//! mention, the mention is linked to KB entities to build a small candidate set
//! of `(subject, relation)` pairs, and the pair maximizing
//! `p(r | q) · p(s | q, r)` is returned.

pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod kb;
pub mod labeler;
pub mod neural;
pub mod pipeline;
pub mod pruning;
pub mod relation;
pub mod subject;
pub mod toy;
pub mod training;

pub use error::{Error, Result};
