use rayon::prelude::*;

use crate::encoder::{encode, encode_instructed, EncoderParams, Tokenizer};
use crate::error::{Error, Result};
use crate::numerics::{cosine_sim, SeededRng};

use super::{CandidatePool, TrainingSample};

/// Mine offline hard negatives: rank the pool by cosine similarity to the
/// instructed query embedding (descending, 1-indexed, ties broken by stable
/// pool index), exclude the positive, and sample M without replacement
/// uniformly from ranks [lo, hi].
///
/// Pools smaller than `hi` fall back to the window
/// [min(lo, |pool|/2), |pool|] with a logged warning. Output order equals
/// input order regardless of parallelism.
pub fn mine_hard_negatives(
    params: &EncoderParams,
    tokenizer: &Tokenizer,
    samples: &[TrainingSample],
    pool: &CandidatePool,
    window: (usize, usize),
    m: usize,
    rng: &mut SeededRng,
) -> Result<Vec<TrainingSample>> {
    let (mut lo, mut hi) = window;
    if lo == 0 || hi < lo {
        return Err(Error::Config(format!("invalid rank window [{lo}, {hi}]")));
    }
    if m == 0 {
        return Err(Error::Config("mining M must be >= 1".into()));
    }
    if pool.is_empty() {
        return Err(Error::Data("mining: empty candidate pool".into()));
    }
    if pool.len() < hi {
        let new_lo = lo.min(pool.len() / 2).max(1);
        let new_hi = pool.len();
        log::warn!(
            "candidate pool has {} passages (< window hi {hi}); falling back to window [{new_lo}, {new_hi}]",
            pool.len()
        );
        lo = new_lo;
        hi = new_hi;
    }
    let window_size = hi - lo + 1;
    if m > window_size {
        return Err(Error::Data(format!(
            "cannot sample {m} negatives from rank window [{lo}, {hi}] of size {window_size}"
        )));
    }

    // Pool embeddings are shared across queries.
    let pool_embeddings: Vec<Vec<f64>> = pool
        .passages()
        .par_iter()
        .map(|p| encode(&tokenizer.tokenize(p)?, params))
        .collect::<Result<_>>()?;

    // Child RNGs derived in input order keep mining deterministic under any
    // worker count.
    let child_rngs: Vec<SeededRng> = samples.iter().map(|_| rng.child()).collect();

    samples
        .par_iter()
        .zip(child_rngs)
        .map(|(sample, mut srng)| {
            sample.validate()?;
            let q = encode_instructed(&sample.instruction, &sample.query, tokenizer, params)?;
            let mut sims: Vec<(usize, f64)> = pool_embeddings
                .iter()
                .enumerate()
                .map(|(idx, e)| Ok((idx, cosine_sim(&q, e)?)))
                .collect::<Result<_>>()?;
            // Descending similarity, stable pool index on ties.
            sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

            // Candidates at 1-indexed ranks lo..=hi, minus the positive.
            let candidates: Vec<usize> = sims[lo - 1..hi]
                .iter()
                .map(|(idx, _)| *idx)
                .filter(|idx| pool.get(*idx) != sample.positive)
                .collect();
            if candidates.len() < m {
                return Err(Error::Data(format!(
                    "rank window [{lo}, {hi}] holds only {} candidates after excluding the positive (need {m})",
                    candidates.len()
                )));
            }
            let negatives: Vec<String> = srng
                .sample_indices(candidates.len(), m)
                .into_iter()
                .map(|i| pool.get(candidates[i]).to_string())
                .collect();

            let mined = TrainingSample {
                hard_negatives: negatives,
                ..sample.clone()
            };
            mined.validate()?;
            Ok(mined)
        })
        .collect()
}
