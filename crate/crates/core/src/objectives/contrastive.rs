use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm, l2_normalize, logsumexp, softmax, SeededRng};

use super::{probes, BatchGrads, EmbeddedBatch, LossBreakdown, LossConfig, SampleDiag};

/// Which two hard negatives a sample blends pair-wise, and the Beta(2,2)
/// coefficient. Drawn fresh per sample per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseDraw {
    pub source_a: usize,
    pub source_b: usize,
    pub lambda: f64,
}

/// Sample one pair-wise draw per batch sample: two distinct negative indices
/// without replacement and lambda ~ Beta(2, 2).
pub fn sample_pairwise_draws(n: usize, m: usize, rng: &mut SeededRng) -> Result<Vec<PairwiseDraw>> {
    if m < 2 {
        return Err(Error::Config(format!(
            "pair-wise mixing requires M >= 2 hard negatives, got {m}"
        )));
    }
    Ok((0..n)
        .map(|_| {
            let idx = rng.sample_indices(m, 2);
            PairwiseDraw {
                source_a: idx[0],
                source_b: idx[1],
                lambda: rng.beta_2_2(),
            }
        })
        .collect())
}

/// w_i = (1 - p_i)^gamma. Weights are detached: they scale the loss but carry
/// no gradient of their own.
pub fn focal_weights(positive_probs: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma >= 0.0) {
        return Err(Error::Config(format!("gamma must be >= 0, got {gamma}")));
    }
    positive_probs
        .iter()
        .map(|&p| {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Domain(format!(
                    "positive probability {p} outside (0, 1]"
                )));
            }
            Ok((1.0 - p).powf(gamma))
        })
        .collect()
}

/// Pair-wise synthetic hard negative: unit-normalized convex blend of two
/// existing negatives.
pub fn mix_pairwise(neg_j: &[f64], neg_k: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if neg_j.len() != neg_k.len() {
        return Err(Error::Dimension(format!(
            "mix_pairwise: {} vs {}",
            neg_j.len(),
            neg_k.len()
        )));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Config(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    probes::note_mixing();
    let blend: Vec<f64> = neg_j
        .iter()
        .zip(neg_k)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    if l2_norm(&blend) == 0.0 {
        return Err(Error::Domain("mix_pairwise: zero blend vector".into()));
    }
    l2_normalize(&blend)
}

/// List-wise synthetic hard negative: negatives blended with weights given by
/// the softmax of their raw cosine similarities to the query (no temperature,
/// exactly as the mixing rule is defined).
pub fn mix_listwise(query: &[f64], negs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if negs.is_empty() {
        return Err(Error::Input("mix_listwise: no negatives".into()));
    }
    probes::note_mixing();
    let sims = negs
        .iter()
        .map(|n| crate::numerics::cosine_sim(query, n))
        .collect::<Result<Vec<f64>>>()?;
    let weights = softmax(&sims, 1.0)?;
    let d = query.len();
    let mut blend = vec![0.0; d];
    for (w, neg) in weights.iter().zip(negs) {
        for (b, x) in blend.iter_mut().zip(neg) {
            *b += w * x;
        }
    }
    if l2_norm(&blend) == 0.0 {
        return Err(Error::Domain("mix_listwise: zero blend vector".into()));
    }
    l2_normalize(&blend)
}

struct UnitRow {
    norm: f64,
    unit: Vec<f64>,
}

fn unit_row(v: &[f64], what: &str) -> Result<UnitRow> {
    let norm = l2_norm(v);
    if norm == 0.0 {
        return Err(Error::Domain(format!("{what} has zero norm")));
    }
    Ok(UnitRow {
        norm,
        unit: v.iter().map(|x| x / norm).collect(),
    })
}

/// d cos(a, b) contributions: da += g (b_hat - c a_hat)/|a|, likewise for b.
fn add_cosine_grad(g: f64, a: &UnitRow, b: &UnitRow, da: &mut [f64], db: &mut [f64]) {
    let c = dot(&a.unit, &b.unit);
    for i in 0..da.len() {
        da[i] += g * (b.unit[i] - c * a.unit[i]) / a.norm;
        db[i] += g * (a.unit[i] - c * b.unit[i]) / b.norm;
    }
}

pub(crate) struct EvalOutput {
    pub breakdown: LossBreakdown,
    pub grads: Option<BatchGrads>,
}

/// Shared evaluation of Eq-3-style losses with optional focal reweighting and
/// mixing. The denominator of query i holds, in order: its positive, the
/// other in-batch positives, every sample's offline hard negatives, and (when
/// enabled) every sample's pair-wise and list-wise synthetic negatives.
/// Values are computed in log space; gradients are hand-derived, with focal
/// weights treated as constants.
pub(crate) fn eval_contrastive(
    batch: &EmbeddedBatch,
    tau: f64,
    gamma: f64,
    pairwise: Option<&[PairwiseDraw]>,
    listwise: bool,
    focal_override: Option<&[f64]>,
    want_grads: bool,
) -> Result<EvalOutput> {
    batch.validate()?;
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    if !(gamma >= 0.0) {
        return Err(Error::Config(format!("gamma must be >= 0, got {gamma}")));
    }
    let n = batch.n();
    let m = batch.m();
    let d = batch.dim();

    if let Some(draws) = pairwise {
        if draws.len() != n {
            return Err(Error::Config(format!(
                "{} pair-wise draws for batch of {n}",
                draws.len()
            )));
        }
        if m < 2 {
            return Err(Error::Config(format!(
                "pair-wise mixing requires M >= 2 hard negatives, got {m}"
            )));
        }
        for (i, dr) in draws.iter().enumerate() {
            if dr.source_a >= m || dr.source_b >= m || dr.source_a == dr.source_b {
                return Err(Error::Config(format!(
                    "pair-wise draw {i} references negatives {}/{} of {m}",
                    dr.source_a, dr.source_b
                )));
            }
            if !(dr.lambda > 0.0 && dr.lambda < 1.0) {
                return Err(Error::Config(format!(
                    "pair-wise draw {i} lambda {} outside (0, 1)",
                    dr.lambda
                )));
            }
        }
    }
    if listwise && m < 1 {
        return Err(Error::Config(
            "list-wise mixing requires M >= 1 hard negatives".into(),
        ));
    }
    if let Some(w) = focal_override {
        if w.len() != n {
            return Err(Error::Config(format!(
                "{} focal weights for batch of {n}",
                w.len()
            )));
        }
    }
    if m > 0 {
        probes::note_hard_negatives();
    }

    let queries: Vec<UnitRow> = batch
        .queries
        .iter()
        .enumerate()
        .map(|(i, q)| unit_row(q, &format!("query {i}")))
        .collect::<Result<_>>()?;
    let positives: Vec<UnitRow> = batch
        .positives
        .iter()
        .enumerate()
        .map(|(i, p)| unit_row(p, &format!("positive {i}")))
        .collect::<Result<_>>()?;
    let negatives: Vec<Vec<UnitRow>> = batch
        .hard_negatives
        .iter()
        .enumerate()
        .map(|(i, negs)| {
            negs.iter()
                .enumerate()
                .map(|(k, neg)| unit_row(neg, &format!("negative {i},{k}")))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    // Pair-wise synthetic blends, kept in raw (pre-normalization) form:
    // cosine is scale invariant, so the explicit unit normalization of the
    // synthetic negative collapses into the similarity.
    let pair_blends: Option<Vec<UnitRow>> = match pairwise {
        Some(draws) => Some(
            draws
                .iter()
                .enumerate()
                .map(|(i, dr)| {
                    probes::note_mixing();
                    let a = &batch.hard_negatives[i][dr.source_a];
                    let b = &batch.hard_negatives[i][dr.source_b];
                    let blend: Vec<f64> = a
                        .iter()
                        .zip(b)
                        .map(|(x, y)| dr.lambda * x + (1.0 - dr.lambda) * y)
                        .collect();
                    unit_row(&blend, &format!("pair-wise blend {i}"))
                })
                .collect::<Result<_>>()?,
        ),
        None => None,
    };

    // List-wise blends with their softmax weights (needed for backprop).
    struct ListBlend {
        row: UnitRow,
        weights: Vec<f64>,
    }
    let list_blends: Option<Vec<ListBlend>> = if listwise {
        Some(
            (0..n)
                .map(|i| {
                    probes::note_mixing();
                    let sims: Vec<f64> = negatives[i]
                        .iter()
                        .map(|neg| dot(&queries[i].unit, &neg.unit))
                        .collect();
                    let weights = softmax(&sims, 1.0)?;
                    let mut blend = vec![0.0; d];
                    for (w, neg) in weights.iter().zip(&batch.hard_negatives[i]) {
                        for (b, x) in blend.iter_mut().zip(neg) {
                            *b += w * x;
                        }
                    }
                    Ok(ListBlend {
                        row: unit_row(&blend, &format!("list-wise blend {i}"))?,
                        weights,
                    })
                })
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    let synth_per_sample =
        usize::from(pair_blends.is_some()) + usize::from(list_blends.is_some());

    // Logit layout per query: positive, in-batch positives (j != i), all hard
    // negatives (j, k), pair-wise blends (all j), list-wise blends (all j).
    let mut per_sample = Vec::with_capacity(n);
    let mut logits_by_row: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut total = 0.0;
    for i in 0..n {
        let q = &queries[i];
        let mut logits = Vec::with_capacity(1 + (n - 1) + n * m + 2 * n);
        logits.push(dot(&q.unit, &positives[i].unit) / tau);
        for (j, p) in positives.iter().enumerate() {
            if j != i {
                logits.push(dot(&q.unit, &p.unit) / tau);
            }
        }
        for negs in &negatives {
            for neg in negs {
                logits.push(dot(&q.unit, &neg.unit) / tau);
            }
        }
        if let Some(blends) = &pair_blends {
            for blend in blends {
                logits.push(dot(&q.unit, &blend.unit) / tau);
            }
        }
        if let Some(blends) = &list_blends {
            for blend in blends {
                logits.push(dot(&q.unit, &blend.row.unit) / tau);
            }
        }

        let log_z = logsumexp(&logits);
        let log_p = logits[0] - log_z;
        let p = log_p.exp().min(1.0);
        let w = match focal_override {
            Some(ws) => ws[i],
            None => (1.0 - p).powf(gamma),
        };
        total += -w * log_p;
        per_sample.push(SampleDiag {
            positive_prob: p,
            focal_weight: w,
            log_denominator: log_z,
            synthetic_negative_count: synth_per_sample,
        });
        logits_by_row.push(logits);
    }
    total /= n as f64;

    let grads = if want_grads {
        let mut dq = vec![vec![0.0; d]; n];
        let mut dp = vec![vec![0.0; d]; n];
        let mut dneg: Vec<Vec<Vec<f64>>> = batch
            .hard_negatives
            .iter()
            .map(|negs| vec![vec![0.0; d]; negs.len()])
            .collect();
        let mut dpair = vec![vec![0.0; d]; if pair_blends.is_some() { n } else { 0 }];
        let mut dlist = vec![vec![0.0; d]; if list_blends.is_some() { n } else { 0 }];

        for i in 0..n {
            let logits = &logits_by_row[i];
            let log_z = per_sample[i].log_denominator;
            let alpha = per_sample[i].focal_weight / n as f64;
            // dL/dt for term x: alpha * (sigma_x - [x == positive])
            let mut term = 0usize;
            let dcos = |t: f64, is_pos: bool| -> f64 {
                let sigma = (t - log_z).exp();
                alpha * (sigma - if is_pos { 1.0 } else { 0.0 }) / tau
            };

            let g = dcos(logits[term], true);
            add_cosine_grad(g, &queries[i], &positives[i], &mut dq[i], &mut dp[i]);
            term += 1;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let g = dcos(logits[term], false);
                add_cosine_grad(g, &queries[i], &positives[j], &mut dq[i], &mut dp[j]);
                term += 1;
            }
            for (j, negs) in negatives.iter().enumerate() {
                for (k, neg) in negs.iter().enumerate() {
                    let g = dcos(logits[term], false);
                    add_cosine_grad(g, &queries[i], neg, &mut dq[i], &mut dneg[j][k]);
                    term += 1;
                }
            }
            if let Some(blends) = &pair_blends {
                for (j, blend) in blends.iter().enumerate() {
                    let g = dcos(logits[term], false);
                    add_cosine_grad(g, &queries[i], blend, &mut dq[i], &mut dpair[j]);
                    term += 1;
                }
            }
            if let Some(blends) = &list_blends {
                for (j, blend) in blends.iter().enumerate() {
                    let g = dcos(logits[term], false);
                    add_cosine_grad(g, &queries[i], &blend.row, &mut dq[i], &mut dlist[j]);
                    term += 1;
                }
            }
            debug_assert_eq!(term, logits.len());
        }

        // Pair-wise blends: raw blend gradient splits linearly onto sources.
        if let (Some(draws), Some(_)) = (pairwise, &pair_blends) {
            for (j, dr) in draws.iter().enumerate() {
                for idx in 0..d {
                    dneg[j][dr.source_a][idx] += dr.lambda * dpair[j][idx];
                    dneg[j][dr.source_b][idx] += (1.0 - dr.lambda) * dpair[j][idx];
                }
            }
        }

        // List-wise blends: gradient reaches the sources directly and through
        // the similarity softmax (the weights depend on query and negatives).
        if let Some(blends) = &list_blends {
            for (j, blend) in blends.iter().enumerate() {
                let g_blend = &dlist[j];
                let mut dmu = vec![0.0; m];
                for (k, neg) in batch.hard_negatives[j].iter().enumerate() {
                    let mu = blend.weights[k];
                    for idx in 0..d {
                        dneg[j][k][idx] += mu * g_blend[idx];
                    }
                    dmu[k] = dot(g_blend, neg);
                }
                let inner: f64 = blend
                    .weights
                    .iter()
                    .zip(&dmu)
                    .map(|(mu, dm)| mu * dm)
                    .sum();
                for k in 0..m {
                    let du = blend.weights[k] * (dmu[k] - inner);
                    // u_k = cos(q_j, neg_{j,k})
                    add_cosine_grad(du, &queries[j], &negatives[j][k], &mut dq[j], &mut dneg[j][k]);
                }
            }
        }

        Some(BatchGrads {
            queries: dq,
            positives: dp,
            hard_negatives: dneg,
        })
    } else {
        None
    };

    Ok(EvalOutput {
        breakdown: LossBreakdown { total, per_sample },
        grads,
    })
}

/// InfoNCE with in-batch negatives and in-batch hard negatives (Eq-3 form:
/// no focal weighting, no mixing).
pub fn infonce_loss(batch: &EmbeddedBatch, tau: f64) -> Result<LossBreakdown> {
    Ok(eval_contrastive(batch, tau, 0.0, None, false, None, false)?.breakdown)
}

/// [`infonce_loss`] plus gradients with respect to the batch rows.
pub fn infonce_grad(batch: &EmbeddedBatch, tau: f64) -> Result<(LossBreakdown, BatchGrads)> {
    let out = eval_contrastive(batch, tau, 0.0, None, false, None, true)?;
    Ok((out.breakdown, out.grads.unwrap()))
}

fn require_mixing_feasible(batch: &EmbeddedBatch, cfg: &LossConfig) -> Result<()> {
    if cfg.enable_pairwise_mix && batch.m() < 2 {
        return Err(Error::Config(format!(
            "pair-wise mixing requires M >= 2 hard negatives, got {}",
            batch.m()
        )));
    }
    if cfg.enable_listwise_mix && batch.m() < 1 {
        return Err(Error::Config(
            "list-wise mixing requires M >= 1 hard negatives".into(),
        ));
    }
    Ok(())
}

/// Full contrastive objective: focal-reweighted InfoNCE over the augmented
/// denominator, with pair-wise lambdas sampled fresh per sample.
pub fn contrastive_loss_full(
    batch: &EmbeddedBatch,
    cfg: &LossConfig,
    rng: &mut SeededRng,
) -> Result<LossBreakdown> {
    batch.validate()?;
    require_mixing_feasible(batch, cfg)?;
    let draws = if cfg.enable_pairwise_mix {
        Some(sample_pairwise_draws(batch.n(), batch.m(), rng)?)
    } else {
        None
    };
    contrastive_loss_with_draws(batch, cfg, draws.as_deref(), None)
}

/// Deterministic variant taking explicit pair-wise draws; `focal_override`
/// re-evaluates the loss with frozen weights (the finite-difference surrogate
/// for the detached focal term).
pub fn contrastive_loss_with_draws(
    batch: &EmbeddedBatch,
    cfg: &LossConfig,
    draws: Option<&[PairwiseDraw]>,
    focal_override: Option<&[f64]>,
) -> Result<LossBreakdown> {
    require_mixing_feasible(batch, cfg)?;
    if cfg.enable_pairwise_mix && draws.is_none() {
        return Err(Error::Config(
            "pair-wise mixing enabled but no draws supplied".into(),
        ));
    }
    let pairwise = if cfg.enable_pairwise_mix { draws } else { None };
    Ok(eval_contrastive(
        batch,
        cfg.tau_cl,
        cfg.gamma,
        pairwise,
        cfg.enable_listwise_mix,
        focal_override,
        false,
    )?
    .breakdown)
}

/// Loss and gradients for the full contrastive objective under fixed draws.
/// Focal weights are evaluated at the current probabilities and then treated
/// as constants, so the gradient matches finite differences of the
/// frozen-weight surrogate.
pub fn contrastive_loss_grad(
    batch: &EmbeddedBatch,
    cfg: &LossConfig,
    draws: Option<&[PairwiseDraw]>,
) -> Result<(LossBreakdown, BatchGrads)> {
    require_mixing_feasible(batch, cfg)?;
    if cfg.enable_pairwise_mix && draws.is_none() {
        return Err(Error::Config(
            "pair-wise mixing enabled but no draws supplied".into(),
        ));
    }
    let pairwise = if cfg.enable_pairwise_mix { draws } else { None };
    let out = eval_contrastive(
        batch,
        cfg.tau_cl,
        cfg.gamma,
        pairwise,
        cfg.enable_listwise_mix,
        None,
        true,
    )?;
    Ok((out.breakdown, out.grads.unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        l2_normalize(v).unwrap()
    }

    fn batch_m0(queries: Vec<Vec<f64>>, positives: Vec<Vec<f64>>) -> EmbeddedBatch {
        let n = queries.len();
        EmbeddedBatch {
            queries,
            positives,
            hard_negatives: vec![Vec::new(); n],
        }
    }

    #[test]
    fn single_sample_no_negatives_is_zero() {
        let q = unit(&[0.3, -0.2, 0.9]);
        let batch = batch_m0(vec![q.clone()], vec![q]);
        let out = infonce_loss(&batch, 0.5).unwrap();
        assert_eq!(out.total, 0.0);
        assert_eq!(out.per_sample[0].positive_prob, 1.0);
    }

    #[test]
    fn two_way_uniform_softmax_is_ln2() {
        let v = unit(&[1.0, 1.0]);
        let batch = batch_m0(vec![v.clone(), v.clone()], vec![v.clone(), v]);
        let out = infonce_loss(&batch, 1.0).unwrap();
        assert!((out.total - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn breakdown_total_matches_weighted_per_sample() {
        let batch = EmbeddedBatch {
            queries: vec![unit(&[1.0, 0.2, 0.0]), unit(&[0.1, 1.0, -0.4])],
            positives: vec![unit(&[0.9, 0.1, 0.3]), unit(&[0.0, 1.0, 0.2])],
            hard_negatives: vec![
                vec![unit(&[0.5, -0.5, 0.1]), unit(&[-0.3, 0.8, 0.2])],
                vec![unit(&[0.7, 0.7, 0.0]), unit(&[0.2, -0.1, 1.0])],
            ],
        };
        let cfg = LossConfig {
            gamma: 0.5,
            tau_cl: 0.7,
            enable_listwise_mix: true,
            ..LossConfig::default()
        };
        let out = contrastive_loss_with_draws(&batch, &cfg, None, None).unwrap();
        let recomputed = out
            .per_sample
            .iter()
            .map(|s| -s.focal_weight * s.positive_prob.ln())
            .sum::<f64>()
            / out.per_sample.len() as f64;
        assert!((out.total - recomputed).abs() < 1e-10);
        for s in &out.per_sample {
            assert!(s.positive_prob > 0.0 && s.positive_prob <= 1.0);
            assert!(s.focal_weight >= 0.0 && s.focal_weight <= 1.0);
            assert_eq!(s.synthetic_negative_count, 1);
        }
    }

    #[test]
    fn focal_weight_examples() {
        let w = focal_weights(&[0.2, 0.7, 1.0], 0.0).unwrap();
        assert_eq!(w, vec![1.0, 1.0, 1.0]);
        let w = focal_weights(&[1.0], 2.0).unwrap();
        assert_eq!(w[0], 0.0);
        let w = focal_weights(&[0.5], 0.5).unwrap();
        assert!((w[0] - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(focal_weights(&[0.0], 1.0).is_err());
    }

    #[test]
    fn focal_weights_monotone_in_p() {
        for gamma in [0.0, 0.5, 1.0, 2.0] {
            let probs: Vec<f64> = (1..=40).map(|i| i as f64 / 40.0).collect();
            let w = focal_weights(&probs, gamma).unwrap();
            for pair in w.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-15);
            }
            assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn pairwise_mix_identity_symmetry_and_oracle() {
        let n = unit(&[0.6, -0.8, 0.0]);
        for lambda in [0.1, 0.5, 0.9] {
            let mixed = mix_pairwise(&n, &n, lambda).unwrap();
            for (a, b) in mixed.iter().zip(&n) {
                assert!((a - b).abs() < 1e-12);
            }
        }

        let a = vec![1.0, 0.0];
        let b = vec![0.0, 1.0];
        let mixed = mix_pairwise(&a, &b, 0.5).unwrap();
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        assert!((mixed[0] - inv_sqrt2).abs() < 1e-12);
        assert!((mixed[1] - inv_sqrt2).abs() < 1e-12);

        // unit vectors at 60 degrees, lambda = 0.25
        let a = vec![1.0, 0.0];
        let b = vec![0.5, 3.0f64.sqrt() / 2.0];
        let lambda = 0.25;
        let mixed = mix_pairwise(&a, &b, lambda).unwrap();
        let blend: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
            .collect();
        let norm = l2_norm(&blend);
        for (got, want) in mixed.iter().zip(blend.iter().map(|x| x / norm)) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_mix_rejects_degenerate_input() {
        let a = vec![1.0, 0.0];
        let b = vec![-1.0, 0.0];
        assert!(matches!(mix_pairwise(&a, &b, 0.5), Err(Error::Domain(_))));
        assert!(mix_pairwise(&a, &b, 0.0).is_err());
        assert!(mix_pairwise(&a, &b, 1.0).is_err());
    }

    #[test]
    fn listwise_mix_single_and_uniform() {
        let q = unit(&[1.0, 1.0, 0.0]);
        let n1 = vec![0.0, 2.0, 0.0];
        let out = mix_listwise(&q, &[n1.clone()]).unwrap();
        assert_eq!(out, unit(&n1));

        // all negatives equally similar to the query -> uniform weights
        let negs = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let q = unit(&[1.0, 1.0, 0.0]);
        let out = mix_listwise(&q, &negs).unwrap();
        let mean = unit(&[0.5, 0.5, 0.0]);
        for (a, b) in out.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn listwise_mix_matches_float64_oracle() {
        let q = unit(&[0.2, -0.7, 1.0]);
        let negs = vec![
            vec![0.9, 0.1, -0.2],
            vec![-0.4, 0.5, 0.8],
            vec![0.3, 0.3, 0.3],
        ];
        let out = mix_listwise(&q, &negs).unwrap();

        let sims: Vec<f64> = negs
            .iter()
            .map(|n| crate::numerics::cosine_sim(&q, n).unwrap())
            .collect();
        let z: f64 = sims.iter().map(|s| s.exp()).sum();
        let weights: Vec<f64> = sims.iter().map(|s| s.exp() / z).collect();
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut blend = vec![0.0; 3];
        for (w, neg) in weights.iter().zip(&negs) {
            for (b, x) in blend.iter_mut().zip(neg) {
                *b += w * x;
            }
        }
        let want = unit(&blend);
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn full_loss_reduces_to_infonce() {
        let batch = EmbeddedBatch {
            queries: vec![unit(&[1.0, 0.1, -0.2]), unit(&[0.0, 1.0, 0.5])],
            positives: vec![unit(&[0.8, 0.2, 0.0]), unit(&[0.1, 0.9, 0.4])],
            hard_negatives: vec![
                vec![unit(&[0.4, -0.6, 0.2])],
                vec![unit(&[-0.2, 0.3, 0.9])],
            ],
        };
        let cfg = LossConfig {
            gamma: 0.0,
            tau_cl: 0.05,
            enable_pairwise_mix: false,
            enable_listwise_mix: false,
            ..LossConfig::default()
        };
        let full = contrastive_loss_with_draws(&batch, &cfg, None, None).unwrap();
        let plain = infonce_loss(&batch, 0.05).unwrap();
        assert_eq!(full.total.to_bits(), plain.total.to_bits());
    }

    #[test]
    fn mixing_only_grows_the_loss() {
        let mut rng = SeededRng::new(77);
        for trial in 0..20 {
            let d = 6;
            let n = 3;
            let m = 3;
            let rand_unit = |rng: &mut SeededRng| {
                let v: Vec<f64> = (0..d).map(|_| rng.uniform_symmetric(1.0)).collect();
                unit(&v)
            };
            let batch = EmbeddedBatch {
                queries: (0..n).map(|_| rand_unit(&mut rng)).collect(),
                positives: (0..n).map(|_| rand_unit(&mut rng)).collect(),
                hard_negatives: (0..n)
                    .map(|_| (0..m).map(|_| rand_unit(&mut rng)).collect())
                    .collect(),
            };
            let draws = sample_pairwise_draws(n, m, &mut rng).unwrap();
            let base = LossConfig {
                gamma: 0.0,
                tau_cl: 1.0,
                ..LossConfig::default()
            };
            let off = contrastive_loss_with_draws(&batch, &base, None, None).unwrap();
            let on_cfg = LossConfig {
                enable_pairwise_mix: true,
                enable_listwise_mix: true,
                ..base
            };
            let on = contrastive_loss_with_draws(&batch, &on_cfg, Some(&draws), None).unwrap();
            assert!(
                on.total >= off.total - 1e-12,
                "trial {trial}: {} < {}",
                on.total,
                off.total
            );
        }
    }

    #[test]
    fn mixing_config_violations() {
        let q = unit(&[1.0, 0.0]);
        let batch = EmbeddedBatch {
            queries: vec![q.clone()],
            positives: vec![q.clone()],
            hard_negatives: vec![vec![q.clone()]],
        };
        let cfg = LossConfig {
            enable_pairwise_mix: true,
            ..LossConfig::default()
        };
        let mut rng = SeededRng::new(1);
        assert!(matches!(
            contrastive_loss_full(&batch, &cfg, &mut rng),
            Err(Error::Config(_))
        ));
        let none = EmbeddedBatch {
            hard_negatives: vec![Vec::new()],
            ..batch
        };
        let cfg = LossConfig {
            enable_listwise_mix: true,
            ..LossConfig::default()
        };
        assert!(matches!(
            contrastive_loss_full(&none, &cfg, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn adding_negatives_strictly_increases_loss() {
        let q = unit(&[1.0, 0.3, 0.0]);
        let p = unit(&[0.9, 0.4, 0.1]);
        let neg = unit(&[0.5, 0.5, 0.5]);
        let without = EmbeddedBatch {
            queries: vec![q.clone()],
            positives: vec![p.clone()],
            hard_negatives: vec![Vec::new()],
        };
        let with = EmbeddedBatch {
            queries: vec![q],
            positives: vec![p],
            hard_negatives: vec![vec![neg]],
        };
        let a = infonce_loss(&without, 0.5).unwrap().total;
        let b = infonce_loss(&with, 0.5).unwrap().total;
        assert!(b > a);
    }
}
