//! Desk-scale training stack for a small bidirectional mean-pooled text
//! encoder: focal-reweighted InfoNCE with online hard-negative mixing,
//! matryoshka representation learning, KL contrastive distillation, the data
//! curation pipeline, and a retrieval/STS evaluation harness.

pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod ioutil;
pub mod numerics;
pub mod objectives;
pub mod training;

pub use error::{Error, Result};
