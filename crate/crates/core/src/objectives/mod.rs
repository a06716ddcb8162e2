//! Training objectives over batches of embeddings: InfoNCE with in-batch and
//! hard negatives, focal-style reweighting, online pair-wise/list-wise hard
//! negative mixing, KL contrastive distillation, and matryoshka wrapping.
//!
//! Every loss has a hand-derived gradient with respect to the raw input
//! embeddings; the gradient suite checks each path against central finite
//! differences.

mod contrastive;
mod distill;
mod mrl;

pub use contrastive::{
    contrastive_loss_full, contrastive_loss_grad, contrastive_loss_with_draws, focal_weights,
    infonce_grad, infonce_loss, mix_listwise, mix_pairwise, sample_pairwise_draws, PairwiseDraw,
};
pub use distill::{
    distill_objective, distill_objective_grad, kl_distill_grad, kl_distill_loss,
    student_score_rows, DistillParts,
};
pub use mrl::{
    chain_truncation_grad, mrl_contrastive_grad, mrl_kl_grad, mrl_wrap, truncate_batch,
    truncate_renorm,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every scalar hyperparameter of the loss stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Contrastive temperature.
    #[serde(default = "default_tau_cl")]
    pub tau_cl: f64,
    /// Distillation temperature.
    #[serde(default = "default_tau_kl")]
    pub tau_kl: f64,
    /// Focusing parameter; 0 reduces to uniform weighting.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub enable_pairwise_mix: bool,
    #[serde(default)]
    pub enable_listwise_mix: bool,
    /// Strictly descending prefix dimensions; weights used as given.
    #[serde(default)]
    pub mrl_dims: Vec<usize>,
    #[serde(default)]
    pub mrl_weights: Vec<f64>,
    #[serde(default = "default_cl_weight")]
    pub cl_weight: f64,
    #[serde(default = "default_kl_weight")]
    pub kl_weight: f64,
}

fn default_tau_cl() -> f64 {
    0.01
}
fn default_tau_kl() -> f64 {
    0.05
}
fn default_gamma() -> f64 {
    0.5
}
fn default_cl_weight() -> f64 {
    0.3
}
fn default_kl_weight() -> f64 {
    0.7
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_cl: default_tau_cl(),
            tau_kl: default_tau_kl(),
            gamma: default_gamma(),
            enable_pairwise_mix: false,
            enable_listwise_mix: false,
            mrl_dims: Vec::new(),
            mrl_weights: Vec::new(),
            cl_weight: default_cl_weight(),
            kl_weight: default_kl_weight(),
        }
    }
}

impl LossConfig {
    /// Validate against the embedding dimension of the batch in play.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.tau_cl > 0.0) || !(self.tau_kl > 0.0) {
            return Err(Error::Config(format!(
                "temperatures must be > 0 (tau_cl={}, tau_kl={})",
                self.tau_cl, self.tau_kl
            )));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.mrl_dims.len() != self.mrl_weights.len() {
            return Err(Error::Config(format!(
                "mrl_dims ({}) and mrl_weights ({}) lengths differ",
                self.mrl_dims.len(),
                self.mrl_weights.len()
            )));
        }
        for pair in self.mrl_dims.windows(2) {
            if pair[1] >= pair[0] {
                return Err(Error::Config(format!(
                    "mrl_dims must be strictly descending, got {:?}",
                    self.mrl_dims
                )));
            }
        }
        for &k in &self.mrl_dims {
            if k == 0 || k > dim {
                return Err(Error::Config(format!(
                    "mrl dim {k} out of range for embedding dim {dim}"
                )));
            }
        }
        if self.mrl_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("mrl_weights must be positive".into()));
        }
        if self.cl_weight < 0.0 || self.kl_weight < 0.0 {
            return Err(Error::Config("blend weights must be >= 0".into()));
        }
        Ok(())
    }

    /// The dims actually evaluated: configured list, or just the full
    /// dimension when no MRL dims are set.
    pub(crate) fn effective_dims(&self, dim: usize) -> (Vec<usize>, Vec<f64>) {
        if self.mrl_dims.is_empty() {
            (vec![dim], vec![1.0])
        } else {
            (self.mrl_dims.clone(), self.mrl_weights.clone())
        }
    }
}

/// One training batch already mapped to embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedBatch {
    /// N×d
    pub queries: Vec<Vec<f64>>,
    /// N×d
    pub positives: Vec<Vec<f64>>,
    /// N×M×d, M may be 0
    pub hard_negatives: Vec<Vec<Vec<f64>>>,
}

impl EmbeddedBatch {
    pub fn n(&self) -> usize {
        self.queries.len()
    }

    pub fn m(&self) -> usize {
        self.hard_negatives.first().map_or(0, |h| h.len())
    }

    pub fn dim(&self) -> usize {
        self.queries.first().map_or(0, |q| q.len())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::Input("batch is empty".into()));
        }
        if self.positives.len() != n || self.hard_negatives.len() != n {
            return Err(Error::Dimension(format!(
                "batch rows disagree: {} queries, {} positives, {} negative lists",
                n,
                self.positives.len(),
                self.hard_negatives.len()
            )));
        }
        let d = self.dim();
        let m = self.m();
        if d == 0 {
            return Err(Error::Dimension("zero-dimensional embeddings".into()));
        }
        let check_row = |row: &Vec<f64>, what: &str| -> Result<()> {
            if row.len() != d {
                return Err(Error::Dimension(format!(
                    "{what} has dim {}, expected {d}",
                    row.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("{what} contains non-finite values")));
            }
            Ok(())
        };
        for (i, q) in self.queries.iter().enumerate() {
            check_row(q, &format!("query {i}"))?;
        }
        for (i, p) in self.positives.iter().enumerate() {
            check_row(p, &format!("positive {i}"))?;
        }
        for (i, negs) in self.hard_negatives.iter().enumerate() {
            if negs.len() != m {
                return Err(Error::Data(format!(
                    "ragged hard negatives: sample {i} has {} (expected {m})",
                    negs.len()
                )));
            }
            for (k, neg) in negs.iter().enumerate() {
                check_row(neg, &format!("negative {i},{k}"))?;
            }
        }
        Ok(())
    }
}

/// Per-sample diagnostics of a contrastive loss evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDiag {
    /// Softmax probability of the positive term.
    pub positive_prob: f64,
    /// (1 - p)^gamma, detached from the gradient.
    pub focal_weight: f64,
    /// log of the augmented denominator.
    pub log_denominator: f64,
    /// Synthetic negatives synthesized from this sample's hard negatives.
    pub synthetic_negative_count: usize,
}

/// Scalar loss plus per-sample diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_sample: Vec<SampleDiag>,
}

/// Gradients with respect to the raw rows of an [`EmbeddedBatch`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrads {
    pub queries: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub hard_negatives: Vec<Vec<Vec<f64>>>,
}

impl BatchGrads {
    pub fn zeros_like(batch: &EmbeddedBatch) -> Self {
        let d = batch.dim();
        Self {
            queries: vec![vec![0.0; d]; batch.n()],
            positives: vec![vec![0.0; d]; batch.n()],
            hard_negatives: batch
                .hard_negatives
                .iter()
                .map(|negs| vec![vec![0.0; d]; negs.len()])
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &BatchGrads, factor: f64) {
        let add = |dst: &mut Vec<f64>, src: &Vec<f64>| {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += factor * b;
            }
        };
        for (dst, src) in self.queries.iter_mut().zip(&other.queries) {
            add(dst, src);
        }
        for (dst, src) in self.positives.iter_mut().zip(&other.positives) {
            add(dst, src);
        }
        for (dl, sl) in self.hard_negatives.iter_mut().zip(&other.hard_negatives) {
            for (dst, src) in dl.iter_mut().zip(sl) {
                add(dst, src);
            }
        }
    }
}

/// Call counters used by tests to assert that the stage-1 loss path never
/// touches hard-negative or mixing code. Thread-local so concurrent tests
/// observe only their own thread's loss evaluations.
pub mod probes {
    use std::cell::Cell;

    thread_local! {
        static MIXING_CALLS: Cell<u64> = const { Cell::new(0) };
        static HARD_NEGATIVE_TERMS: Cell<u64> = const { Cell::new(0) };
    }

    pub(crate) fn note_mixing() {
        MIXING_CALLS.with(|c| c.set(c.get() + 1));
    }

    pub(crate) fn note_hard_negatives() {
        HARD_NEGATIVE_TERMS.with(|c| c.set(c.get() + 1));
    }

    /// Synthetic-negative constructions observed on this thread.
    pub fn mixing_calls() -> u64 {
        MIXING_CALLS.with(Cell::get)
    }

    /// Loss evaluations on this thread that consumed offline hard negatives.
    pub fn hard_negative_calls() -> u64 {
        HARD_NEGATIVE_TERMS.with(Cell::get)
    }
}
