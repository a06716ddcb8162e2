//! Synthetic cluster-structured corpus generator used by the convergence and
//! distillation experiments. Queries and documents use disjoint token
//! alphabets that are only associated through training pairs, so an untrained
//! encoder carries no lexical-overlap shortcut.
//!
//! Document identity is a (cluster, slot) coordinate pair: topic tokens name
//! the cluster, slot tokens pick one document inside it. Any wrong document
//! differs from the right one in a full coordinate, never a partial overlap.

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

use super::TrainingSample;

pub const RETRIEVAL_INSTRUCTION: &str = "Given a query, retrieve documents that answer the query";

#[derive(Debug, Clone)]
pub struct ToyCorpusConfig {
    pub clusters: usize,
    pub docs_per_cluster: usize,
    /// Upper bound on distinct generated tokens (excluding specials).
    pub vocab_budget: usize,
    pub train_queries_per_doc: usize,
    pub eval_queries_per_doc: usize,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            clusters: 32,
            docs_per_cluster: 20,
            vocab_budget: 500,
            train_queries_per_doc: 2,
            eval_queries_per_doc: 1,
            seed: 20240915,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    /// Corpus passages; index is the document id.
    pub docs: Vec<String>,
    pub doc_cluster: Vec<usize>,
    /// Instructed query -> positive doc pairs for training (no negatives).
    pub train_samples: Vec<TrainingSample>,
    /// Held-out (query text, positive doc index) pairs.
    pub eval_queries: Vec<(String, usize)>,
}

struct TokenBank {
    cluster_query: Vec<Vec<String>>,
    cluster_doc: Vec<Vec<String>>,
    slot_query: Vec<Vec<String>>,
    slot_doc: Vec<Vec<String>>,
    filler: Vec<String>,
}

const CLUSTER_TOKENS: usize = 4;
const SLOT_TOKENS: usize = 2;
const FILLER_TOKENS: usize = 16;

fn build_bank(cfg: &ToyCorpusConfig) -> Result<TokenBank> {
    let need = 2 * (cfg.clusters * CLUSTER_TOKENS + cfg.docs_per_cluster * SLOT_TOKENS)
        + FILLER_TOKENS;
    if need > cfg.vocab_budget {
        return Err(Error::Config(format!(
            "vocab budget {} cannot hold {} generated tokens",
            cfg.vocab_budget, need
        )));
    }
    Ok(TokenBank {
        cluster_query: (0..cfg.clusters)
            .map(|c| (0..CLUSTER_TOKENS).map(|t| format!("qc{c}x{t}")).collect())
            .collect(),
        cluster_doc: (0..cfg.clusters)
            .map(|c| (0..CLUSTER_TOKENS).map(|t| format!("dc{c}x{t}")).collect())
            .collect(),
        slot_query: (0..cfg.docs_per_cluster)
            .map(|s| (0..SLOT_TOKENS).map(|t| format!("qs{s}x{t}")).collect())
            .collect(),
        slot_doc: (0..cfg.docs_per_cluster)
            .map(|s| (0..SLOT_TOKENS).map(|t| format!("ds{s}x{t}")).collect())
            .collect(),
        filler: (0..FILLER_TOKENS).map(|k| format!("w{k}")).collect(),
    })
}

fn doc_text(bank: &TokenBank, cluster: usize, slot: usize, rng: &mut SeededRng) -> String {
    let picked = rng.sample_indices(CLUSTER_TOKENS, 2);
    let mut tokens = vec![
        bank.cluster_doc[cluster][picked[0]].clone(),
        bank.cluster_doc[cluster][picked[1]].clone(),
    ];
    tokens.extend(bank.slot_doc[slot].iter().cloned());
    tokens.push(bank.filler[rng.below(bank.filler.len())].clone());
    rng.shuffle(&mut tokens);
    tokens.join(" ")
}

fn query_text(bank: &TokenBank, cluster: usize, slot: usize, rng: &mut SeededRng) -> String {
    let picked = rng.sample_indices(CLUSTER_TOKENS, 2);
    let mut tokens = vec![
        bank.cluster_query[cluster][picked[0]].clone(),
        bank.cluster_query[cluster][picked[1]].clone(),
    ];
    tokens.extend(bank.slot_query[slot].iter().cloned());
    rng.shuffle(&mut tokens);
    tokens.join(" ")
}

/// Generate the corpus, training pairs, and held-out evaluation queries.
pub fn generate_toy_corpus(cfg: &ToyCorpusConfig) -> Result<ToyCorpus> {
    let bank = build_bank(cfg)?;
    let mut rng = SeededRng::new(cfg.seed);

    let mut docs = Vec::new();
    let mut doc_cluster = Vec::new();
    let mut train_samples = Vec::new();
    let mut eval_queries = Vec::new();

    for cluster in 0..cfg.clusters {
        for slot in 0..cfg.docs_per_cluster {
            let doc = loop {
                let text = doc_text(&bank, cluster, slot, &mut rng);
                if !docs.contains(&text) {
                    break text;
                }
            };
            let doc_idx = docs.len();
            docs.push(doc.clone());
            doc_cluster.push(cluster);

            for _ in 0..cfg.train_queries_per_doc {
                train_samples.push(TrainingSample {
                    instruction: RETRIEVAL_INSTRUCTION.to_string(),
                    query: query_text(&bank, cluster, slot, &mut rng),
                    positive: doc.clone(),
                    hard_negatives: Vec::new(),
                    symmetric: false,
                });
            }
            for _ in 0..cfg.eval_queries_per_doc {
                eval_queries.push((query_text(&bank, cluster, slot, &mut rng), doc_idx));
            }
        }
    }

    Ok(ToyCorpus {
        docs,
        doc_cluster,
        train_samples,
        eval_queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_sized() {
        let cfg = ToyCorpusConfig {
            clusters: 4,
            docs_per_cluster: 5,
            vocab_budget: 200,
            train_queries_per_doc: 2,
            eval_queries_per_doc: 1,
            seed: 9,
        };
        let a = generate_toy_corpus(&cfg).unwrap();
        let b = generate_toy_corpus(&cfg).unwrap();
        assert_eq!(a.docs, b.docs);
        assert_eq!(a.eval_queries, b.eval_queries);
        assert_eq!(a.docs.len(), 20);
        assert_eq!(a.train_samples.len(), 40);
        assert_eq!(a.eval_queries.len(), 20);

        // No lexical overlap between query-side and doc-side alphabets.
        for s in &a.train_samples {
            for tok in s.query.split(' ') {
                if tok.starts_with('w') {
                    continue;
                }
                assert!(
                    !s.positive.contains(tok),
                    "query token {tok} leaked into doc"
                );
            }
        }
    }

    #[test]
    fn corpus_has_no_duplicate_docs() {
        let cfg = ToyCorpusConfig {
            clusters: 6,
            docs_per_cluster: 8,
            vocab_budget: 300,
            ..ToyCorpusConfig::default()
        };
        let corpus = generate_toy_corpus(&cfg).unwrap();
        let mut set = std::collections::BTreeSet::new();
        for d in &corpus.docs {
            assert!(set.insert(d.clone()));
        }
    }

    #[test]
    fn budget_violations_are_rejected() {
        let cfg = ToyCorpusConfig {
            clusters: 40,
            docs_per_cluster: 30,
            vocab_budget: 100,
            ..ToyCorpusConfig::default()
        };
        assert!(generate_toy_corpus(&cfg).is_err());
    }
}
