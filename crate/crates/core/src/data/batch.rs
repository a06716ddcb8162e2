use crate::encoder::{
    backward_into, encode_with_cache, EncoderGrads, EncoderParams, ForwardCache, Tokenizer,
};
use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm};
use crate::objectives::{BatchGrads, EmbeddedBatch};

use super::{format_query, TrainingSample};

/// The text actually encoded for a passage: instruction-formatted iff the
/// sample is symmetric.
fn passage_text(sample: &TrainingSample, passage: &str) -> Result<String> {
    if sample.symmetric {
        format_query(&sample.instruction, passage)
    } else {
        Ok(passage.to_string())
    }
}

fn check_uniform_m(samples: &[TrainingSample]) -> Result<usize> {
    let m = samples[0].hard_negatives.len();
    for (i, s) in samples.iter().enumerate() {
        if s.hard_negatives.len() != m {
            return Err(Error::Data(format!(
                "ragged batch: sample {i} has {} negatives, expected {m}",
                s.hard_negatives.len()
            )));
        }
    }
    Ok(m)
}

/// Encode a batch of samples into l2-normalized embeddings. Queries are
/// always instruction-formatted; positives and negatives only when the
/// sample is symmetric.
pub fn assemble_batch(
    samples: &[TrainingSample],
    params: &EncoderParams,
    tokenizer: &Tokenizer,
) -> Result<EmbeddedBatch> {
    Ok(assemble_batch_cached(samples, params, tokenizer)?.batch)
}

/// An assembled batch that retains forward caches so a loss gradient over the
/// normalized embeddings can be pushed back into encoder parameters.
pub struct AssembledBatch {
    pub batch: EmbeddedBatch,
    query_caches: Vec<ForwardCache>,
    positive_caches: Vec<ForwardCache>,
    negative_caches: Vec<Vec<ForwardCache>>,
}

impl AssembledBatch {
    /// Backpropagate `grads` (with respect to the l2-normalized embeddings)
    /// through the normalization and the encoder, accumulating into
    /// `encoder_grads`. Sequences are processed in a fixed order so the
    /// accumulation is bit-stable.
    pub fn backward(
        &self,
        params: &EncoderParams,
        grads: &BatchGrads,
        encoder_grads: &mut EncoderGrads,
    ) -> Result<()> {
        let mut apply = |cache: &ForwardCache, g_unit: &[f64]| -> Result<()> {
            // unit = pooled / |pooled|; chain the projection Jacobian.
            let norm = l2_norm(&cache.pooled);
            let unit: Vec<f64> = cache.pooled.iter().map(|x| x / norm).collect();
            let along = dot(g_unit, &unit);
            let d_pooled: Vec<f64> = g_unit
                .iter()
                .zip(&unit)
                .map(|(g, u)| (g - along * u) / norm)
                .collect();
            backward_into(cache, params, &d_pooled, encoder_grads)
        };
        for (cache, g) in self.query_caches.iter().zip(&grads.queries) {
            apply(cache, g)?;
        }
        for (cache, g) in self.positive_caches.iter().zip(&grads.positives) {
            apply(cache, g)?;
        }
        for (caches, gs) in self.negative_caches.iter().zip(&grads.hard_negatives) {
            for (cache, g) in caches.iter().zip(gs) {
                apply(cache, g)?;
            }
        }
        Ok(())
    }
}

/// [`assemble_batch`] keeping the forward caches for training.
pub fn assemble_batch_cached(
    samples: &[TrainingSample],
    params: &EncoderParams,
    tokenizer: &Tokenizer,
) -> Result<AssembledBatch> {
    if samples.is_empty() {
        return Err(Error::Input("assemble_batch: no samples".into()));
    }
    check_uniform_m(samples)?;

    let encode_text = |text: &str| -> Result<(Vec<f64>, ForwardCache)> {
        let cache = encode_with_cache(&tokenizer.tokenize(text)?, params)?;
        let norm = l2_norm(&cache.pooled);
        if norm == 0.0 {
            return Err(Error::Domain(format!("zero-norm embedding for {text:?}")));
        }
        let unit = cache.pooled.iter().map(|x| x / norm).collect();
        Ok((unit, cache))
    };

    let mut queries = Vec::with_capacity(samples.len());
    let mut positives = Vec::with_capacity(samples.len());
    let mut hard_negatives = Vec::with_capacity(samples.len());
    let mut query_caches = Vec::with_capacity(samples.len());
    let mut positive_caches = Vec::with_capacity(samples.len());
    let mut negative_caches = Vec::with_capacity(samples.len());

    for sample in samples {
        sample.validate()?;
        let (q, qc) = encode_text(&format_query(&sample.instruction, &sample.query)?)?;
        queries.push(q);
        query_caches.push(qc);

        let (p, pc) = encode_text(&passage_text(sample, &sample.positive)?)?;
        positives.push(p);
        positive_caches.push(pc);

        let mut negs = Vec::with_capacity(sample.hard_negatives.len());
        let mut caches = Vec::with_capacity(sample.hard_negatives.len());
        for neg in &sample.hard_negatives {
            let (n, nc) = encode_text(&passage_text(sample, neg)?)?;
            negs.push(n);
            caches.push(nc);
        }
        hard_negatives.push(negs);
        negative_caches.push(caches);
    }

    Ok(AssembledBatch {
        batch: EmbeddedBatch {
            queries,
            positives,
            hard_negatives,
        },
        query_caches,
        positive_caches,
        negative_caches,
    })
}
