//! Retrieval and STS evaluation: Recall@K and MRR@K over single-positive
//! qrels, Spearman correlation, matryoshka-dimension sweeps, and
//! positive-vs-hard-negative margin reports.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{format_query, CandidatePool, TrainingSample};
use crate::encoder::{encode, encode_instructed, EncoderParams, Tokenizer};
use crate::error::{Error, Result};
use crate::numerics::cosine_sim;
use crate::objectives::truncate_renorm;

/// One evaluation query: instructed text plus the index of its single
/// relevant passage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskQuery {
    pub query: String,
    #[serde(default)]
    pub instruction: String,
    pub positive_idx: usize,
}

/// A retrieval task: queries with single-positive qrels over a corpus.
#[derive(Debug, Clone)]
pub struct RetrievalTask {
    pub queries: Vec<TaskQuery>,
    pub corpus: CandidatePool,
}

impl RetrievalTask {
    pub fn new(queries: Vec<TaskQuery>, corpus: CandidatePool) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::Data("retrieval task has no queries".into()));
        }
        for (i, q) in queries.iter().enumerate() {
            if q.positive_idx >= corpus.len() {
                return Err(Error::Data(format!(
                    "query {i}: positive index {} out of range (corpus {})",
                    q.positive_idx,
                    corpus.len()
                )));
            }
        }
        Ok(Self { queries, corpus })
    }
}

/// Fraction of queries whose positive ranks within the top K.
pub fn recall_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_ranks(ranks, k)?;
    Ok(ranks.iter().filter(|r| **r <= k).count() as f64 / ranks.len() as f64)
}

/// Mean over queries of 1/rank when the rank is within K, else 0.
pub fn mrr_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_ranks(ranks, k)?;
    Ok(ranks
        .iter()
        .map(|&r| if r <= k { 1.0 / r as f64 } else { 0.0 })
        .sum::<f64>()
        / ranks.len() as f64)
}

fn check_ranks(ranks: &[usize], k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    if ranks.is_empty() {
        return Err(Error::Input("no ranks".into()));
    }
    if ranks.iter().any(|r| *r < 1) {
        return Err(Error::Input("ranks are 1-indexed".into()));
    }
    Ok(())
}

/// Fractional ranks with average-rank tie handling.
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of fractional ranks.
pub fn spearman(pred: &[f64], gold: &[f64]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::Dimension(format!(
            "spearman: {} vs {}",
            pred.len(),
            gold.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::Input("spearman: need at least 2 points".into()));
    }
    let ra = fractional_ranks(pred);
    let rb = fractional_ranks(gold);
    let n = ra.len() as f64;
    let mean_a = ra.iter().sum::<f64>() / n;
    let mean_b = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (a, b) in ra.iter().zip(&rb) {
        cov += (a - mean_a) * (b - mean_b);
        var_a += (a - mean_a) * (a - mean_a);
        var_b += (b - mean_b) * (b - mean_b);
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::Domain(
            "spearman undefined for a constant score vector".into(),
        ));
    }
    Ok(cov / (var_a * var_b).sqrt())
}

/// Metric table and per-query positive ranks for one model/dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub checkpoint_id: String,
    pub dim: usize,
    pub ranks: Vec<usize>,
    pub metrics: BTreeMap<String, f64>,
}

/// Rank of each query's positive (1-indexed), scoring by cosine similarity
/// with ties broken by stable corpus index. `dim` truncates and renormalizes
/// both sides before scoring.
pub fn positive_ranks(
    params: &EncoderParams,
    tokenizer: &Tokenizer,
    task: &RetrievalTask,
    dim: Option<usize>,
) -> Result<Vec<usize>> {
    let full = params.config.dim;
    let dim = dim.unwrap_or(full);
    if dim > full {
        return Err(Error::Config(format!(
            "evaluation dim {dim} exceeds model dim {full}"
        )));
    }
    let corpus_embeddings: Vec<Vec<f64>> = task
        .corpus
        .passages()
        .par_iter()
        .map(|p| truncate_renorm(&encode(&tokenizer.tokenize(p)?, params)?, dim))
        .collect::<Result<_>>()?;

    task.queries
        .par_iter()
        .map(|tq| {
            let q = truncate_renorm(
                &encode_instructed(&tq.instruction, &tq.query, tokenizer, params)?,
                dim,
            )?;
            let sims: Vec<f64> = corpus_embeddings
                .iter()
                .map(|e| cosine_sim(&q, e))
                .collect::<Result<_>>()?;
            let pos = tq.positive_idx;
            let pos_sim = sims[pos];
            // rank = 1 + number of passages strictly ahead of the positive,
            // with the stable-index tie break.
            let ahead = sims
                .iter()
                .enumerate()
                .filter(|(j, s)| **s > pos_sim || (**s == pos_sim && *j < pos))
                .count();
            Ok(ahead + 1)
        })
        .collect()
}

/// Recall@K and MRR@K for the provided cutoffs.
pub fn metric_table(ranks: &[usize], ks: &[usize]) -> Result<BTreeMap<String, f64>> {
    let mut table = BTreeMap::new();
    for &k in ks {
        table.insert(format!("recall@{k}"), recall_at_k(ranks, k)?);
        table.insert(format!("mrr@{k}"), mrr_at_k(ranks, k)?);
    }
    Ok(table)
}

/// Evaluate one checkpoint on a task at one dimension.
pub fn evaluate(
    params: &EncoderParams,
    tokenizer: &Tokenizer,
    task: &RetrievalTask,
    ks: &[usize],
    dim: Option<usize>,
    checkpoint_id: &str,
) -> Result<EvalRun> {
    let ranks = positive_ranks(params, tokenizer, task, dim)?;
    Ok(EvalRun {
        checkpoint_id: checkpoint_id.to_string(),
        dim: dim.unwrap_or(params.config.dim),
        metrics: metric_table(&ranks, ks)?,
        ranks,
    })
}

/// One row of a matryoshka sweep: metrics at a truncation dim plus relative
/// degradation against the full dimension, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dim: usize,
    pub metrics: BTreeMap<String, f64>,
    pub degradation_pct: BTreeMap<String, f64>,
}

/// Evaluate at every requested prefix dimension and report relative
/// degradation (metric_dim - metric_full) / metric_full * 100.
pub fn matryoshka_sweep(
    params: &EncoderParams,
    tokenizer: &Tokenizer,
    task: &RetrievalTask,
    dims: &[usize],
    ks: &[usize],
) -> Result<Vec<SweepRow>> {
    if dims.is_empty() {
        return Err(Error::Config("sweep: no dims".into()));
    }
    let full_ranks = positive_ranks(params, tokenizer, task, None)?;
    let full_metrics = metric_table(&full_ranks, ks)?;
    dims.iter()
        .map(|&dim| {
            let metrics = if dim == params.config.dim {
                full_metrics.clone()
            } else {
                metric_table(&positive_ranks(params, tokenizer, task, Some(dim))?, ks)?
            };
            let degradation_pct = metrics
                .iter()
                .map(|(name, value)| {
                    let full = full_metrics[name];
                    let pct = if full == 0.0 {
                        0.0
                    } else {
                        (value - full) / full * 100.0
                    };
                    (name.clone(), pct)
                })
                .collect();
            Ok(SweepRow {
                dim,
                metrics,
                degradation_pct,
            })
        })
        .collect()
}

/// Per-sample similarity statistics behind the margin case study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub sample: usize,
    pub positive_sim: f64,
    pub neg_min: f64,
    pub neg_median: f64,
    pub neg_max: f64,
    /// positive_sim - neg_median
    pub margin: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Similarity of each query to its positive and hard negatives, with the
/// margin over the median negative. Samples without negatives are skipped
/// with a warning.
pub fn margin_report(
    params: &EncoderParams,
    tokenizer: &Tokenizer,
    samples: &[TrainingSample],
) -> Result<Vec<MarginRow>> {
    let mut rows = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        sample.validate()?;
        if sample.hard_negatives.is_empty() {
            log::warn!("margin report: sample {i} has no hard negatives, skipping");
            continue;
        }
        let q = encode_instructed(&sample.instruction, &sample.query, tokenizer, params)?;
        let passage = |p: &str| -> Result<Vec<f64>> {
            let text = if sample.symmetric {
                format_query(&sample.instruction, p)?
            } else {
                p.to_string()
            };
            encode(&tokenizer.tokenize(&text)?, params)
        };
        let positive_sim = cosine_sim(&q, &passage(&sample.positive)?)?;
        let mut neg_sims: Vec<f64> = sample
            .hard_negatives
            .iter()
            .map(|n| cosine_sim(&q, &passage(n)?))
            .collect::<Result<_>>()?;
        neg_sims.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let neg_median = median(&neg_sims);
        rows.push(MarginRow {
            sample: i,
            positive_sim,
            neg_min: neg_sims[0],
            neg_median,
            neg_max: *neg_sims.last().unwrap(),
            margin: positive_sim - neg_median,
        });
    }
    Ok(rows)
}
