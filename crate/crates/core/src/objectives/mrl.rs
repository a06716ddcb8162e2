use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm};

use super::contrastive::{eval_contrastive, PairwiseDraw};
use super::distill::kl_rows_grad;
use super::{BatchGrads, EmbeddedBatch, LossBreakdown, LossConfig};

/// Keep the first `k` coordinates and rescale to unit norm. `k` equal to the
/// full dimension is the identity (no truncation, no renormalization).
pub fn truncate_renorm(v: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > v.len() {
        return Err(Error::Config(format!(
            "truncation dim {k} out of range for embedding dim {}",
            v.len()
        )));
    }
    if k == v.len() {
        return Ok(v.to_vec());
    }
    let prefix = &v[..k];
    let norm = l2_norm(prefix);
    if norm == 0.0 {
        return Err(Error::Domain(format!("zero-norm prefix at dim {k}")));
    }
    Ok(prefix.iter().map(|x| x / norm).collect())
}

/// Truncate-and-renormalize every row of a batch.
pub fn truncate_batch(batch: &EmbeddedBatch, k: usize) -> Result<EmbeddedBatch> {
    if k == batch.dim() {
        return Ok(batch.clone());
    }
    Ok(EmbeddedBatch {
        queries: batch
            .queries
            .iter()
            .map(|q| truncate_renorm(q, k))
            .collect::<Result<_>>()?,
        positives: batch
            .positives
            .iter()
            .map(|p| truncate_renorm(p, k))
            .collect::<Result<_>>()?,
        hard_negatives: batch
            .hard_negatives
            .iter()
            .map(|negs| negs.iter().map(|n| truncate_renorm(n, k)).collect())
            .collect::<Result<_>>()?,
    })
}

/// Chain a gradient on the truncated-renormalized view back onto the original
/// row: project out the component along the prefix direction, scale by the
/// inverse prefix norm, and zero-pad. Identity when `k` is the full dim.
pub fn chain_truncation_grad(original: &[f64], k: usize, g_trunc: &[f64]) -> Vec<f64> {
    let d = original.len();
    if k == d {
        return g_trunc.to_vec();
    }
    let prefix = &original[..k];
    let norm = l2_norm(prefix);
    let unit: Vec<f64> = prefix.iter().map(|x| x / norm).collect();
    let along = dot(g_trunc, &unit);
    let mut out = vec![0.0; d];
    for i in 0..k {
        out[i] = (g_trunc[i] - along * unit[i]) / norm;
    }
    out
}

/// Wrap a batch-level loss in matryoshka evaluation: for each prefix dim,
/// truncate every embedding, re-normalize, evaluate, and sum with the given
/// weights (used as-is, not renormalized).
pub fn mrl_wrap<'a, F>(
    base_loss: F,
    dims: &'a [usize],
    weights: &'a [f64],
) -> impl Fn(&EmbeddedBatch) -> Result<f64> + 'a
where
    F: Fn(&EmbeddedBatch) -> Result<f64> + 'a,
{
    move |batch: &EmbeddedBatch| {
        if dims.len() != weights.len() {
            return Err(Error::Config(format!(
                "mrl: {} dims vs {} weights",
                dims.len(),
                weights.len()
            )));
        }
        if dims.is_empty() {
            return Err(Error::Config("mrl: empty dims".into()));
        }
        let mut total = 0.0;
        for (&k, &w) in dims.iter().zip(weights) {
            let truncated = truncate_batch(batch, k)?;
            total += w * base_loss(&truncated)?;
        }
        Ok(total)
    }
}

fn chain_batch_grads(
    original: &EmbeddedBatch,
    k: usize,
    grads: &BatchGrads,
) -> BatchGrads {
    BatchGrads {
        queries: original
            .queries
            .iter()
            .zip(&grads.queries)
            .map(|(v, g)| chain_truncation_grad(v, k, g))
            .collect(),
        positives: original
            .positives
            .iter()
            .zip(&grads.positives)
            .map(|(v, g)| chain_truncation_grad(v, k, g))
            .collect(),
        hard_negatives: original
            .hard_negatives
            .iter()
            .zip(&grads.hard_negatives)
            .map(|(vl, gl)| {
                vl.iter()
                    .zip(gl)
                    .map(|(v, g)| chain_truncation_grad(v, k, g))
                    .collect()
            })
            .collect(),
    }
}

/// Matryoshka-wrapped full contrastive objective with gradients on the
/// original (untruncated) batch rows. Returns the weighted total and the
/// per-dim breakdowns in dim order.
pub fn mrl_contrastive_grad(
    batch: &EmbeddedBatch,
    cfg: &LossConfig,
    draws: Option<&[PairwiseDraw]>,
) -> Result<(f64, Vec<LossBreakdown>, BatchGrads)> {
    batch.validate()?;
    cfg.validate(batch.dim())?;
    if cfg.enable_pairwise_mix && draws.is_none() {
        return Err(Error::Config(
            "pair-wise mixing enabled but no draws supplied".into(),
        ));
    }
    let (dims, weights) = cfg.effective_dims(batch.dim());
    let mut total = 0.0;
    let mut breakdowns = Vec::with_capacity(dims.len());
    let mut acc = BatchGrads::zeros_like(batch);
    for (&k, &w) in dims.iter().zip(&weights) {
        let truncated = truncate_batch(batch, k)?;
        let pairwise = if cfg.enable_pairwise_mix { draws } else { None };
        let out = eval_contrastive(
            &truncated,
            cfg.tau_cl,
            cfg.gamma,
            pairwise,
            cfg.enable_listwise_mix,
            None,
            true,
        )?;
        total += w * out.breakdown.total;
        let chained = chain_batch_grads(batch, k, &out.grads.unwrap());
        acc.add_scaled(&chained, w);
        breakdowns.push(out.breakdown);
    }
    Ok((total, breakdowns, acc))
}

/// Matryoshka-wrapped KL distillation: student score rows are recomputed from
/// the truncated embeddings at every dim; the cached teacher rows are fixed.
pub fn mrl_kl_grad(
    batch: &EmbeddedBatch,
    teacher_rows: &[Vec<f64>],
    tau: f64,
    dims: &[usize],
    weights: &[f64],
) -> Result<(f64, BatchGrads)> {
    batch.validate()?;
    let mut total = 0.0;
    let mut acc = BatchGrads::zeros_like(batch);
    for (&k, &w) in dims.iter().zip(weights) {
        let truncated = truncate_batch(batch, k)?;
        let (value, grads) = kl_rows_grad(&truncated, teacher_rows, tau)?;
        total += w * value;
        let chained = chain_batch_grads(batch, k, &grads);
        acc.add_scaled(&chained, w);
    }
    Ok((total, acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::l2_normalize;
    use crate::objectives::infonce_loss;

    fn unit(v: &[f64]) -> Vec<f64> {
        l2_normalize(v).unwrap()
    }

    fn sample_batch() -> EmbeddedBatch {
        EmbeddedBatch {
            queries: vec![unit(&[1.0, 0.2, -0.3, 0.5]), unit(&[0.0, 1.0, 0.4, -0.2])],
            positives: vec![unit(&[0.9, 0.3, -0.1, 0.4]), unit(&[0.1, 0.8, 0.5, 0.0])],
            hard_negatives: vec![
                vec![unit(&[0.2, -0.7, 0.6, 0.1])],
                vec![unit(&[-0.5, 0.1, 0.3, 0.8])],
            ],
        }
    }

    #[test]
    fn full_dim_wrap_is_identity() {
        let batch = sample_batch();
        let base = |b: &EmbeddedBatch| infonce_loss(b, 0.5).map(|o| o.total);
        let wrapped = mrl_wrap(base, &[4], &[1.0]);
        let a = wrapped(&batch).unwrap();
        let b = infonce_loss(&batch, 0.5).unwrap().total;
        assert_eq!(a.to_bits(), b.to_bits());

        let halved = mrl_wrap(
            |b: &EmbeddedBatch| infonce_loss(b, 0.5).map(|o| o.total),
            &[4, 4],
            &[0.5, 0.5],
        );
        let c = halved(&batch).unwrap();
        assert_eq!(c.to_bits(), b.to_bits());
    }

    #[test]
    fn wrap_matches_manual_two_pass() {
        let batch = sample_batch();
        let base = |b: &EmbeddedBatch| infonce_loss(b, 0.5).map(|o| o.total);
        let wrapped = mrl_wrap(base, &[4, 2], &[1.0, 0.3]);
        let got = wrapped(&batch).unwrap();

        let full = infonce_loss(&batch, 0.5).unwrap().total;
        let half = infonce_loss(&truncate_batch(&batch, 2).unwrap(), 0.5)
            .unwrap()
            .total;
        assert!((got - (full + 0.3 * half)).abs() < 1e-12);
    }

    #[test]
    fn truncation_preserves_unit_norm_and_rejects_bad_dims() {
        let v = unit(&[0.3, -0.9, 0.4, 0.1]);
        let t = truncate_renorm(&v, 2).unwrap();
        assert_eq!(t.len(), 2);
        assert!((l2_norm(&t) - 1.0).abs() < 1e-12);
        assert!(matches!(truncate_renorm(&v, 5), Err(Error::Config(_))));
        assert!(matches!(truncate_renorm(&v, 0), Err(Error::Config(_))));
        assert!(matches!(
            truncate_renorm(&[0.0, 0.0, 1.0], 2),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn truncation_grad_is_identity_at_full_dim() {
        let v = vec![0.4, -0.2, 0.9];
        let g = vec![1.0, 2.0, 3.0];
        assert_eq!(chain_truncation_grad(&v, 3, &g), g);
    }
}
