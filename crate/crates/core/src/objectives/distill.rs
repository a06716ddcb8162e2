use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm, softmax, SeededRng};

use super::contrastive::{sample_pairwise_draws, PairwiseDraw};
use super::mrl::{mrl_contrastive_grad, mrl_kl_grad};
use super::{BatchGrads, EmbeddedBatch, LossConfig};

/// Probability floor applied before the log so degenerate rows cannot emit
/// -inf.
const PROB_FLOOR: f64 = 1e-30;

fn check_rows(teacher: &[Vec<f64>], student: &[Vec<f64>]) -> Result<()> {
    if teacher.len() != student.len() {
        return Err(Error::Dimension(format!(
            "kl: {} teacher rows vs {} student rows",
            teacher.len(),
            student.len()
        )));
    }
    if teacher.is_empty() {
        return Err(Error::Input("kl: no rows".into()));
    }
    for (i, (t, s)) in teacher.iter().zip(student).enumerate() {
        if t.len() != s.len() {
            return Err(Error::Dimension(format!(
                "kl: row {i} widths differ ({} vs {})",
                t.len(),
                s.len()
            )));
        }
        if t.is_empty() {
            return Err(Error::Input(format!("kl: row {i} is empty")));
        }
    }
    Ok(())
}

/// Mean over rows of KL(P_t || P_s) where both distributions are
/// temperature-tau softmaxes of the aligned score rows (column 0 the
/// positive, columns 1..=M the hard negatives). Teacher scores carry no
/// gradient.
pub fn kl_distill_loss(teacher: &[Vec<f64>], student: &[Vec<f64>], tau: f64) -> Result<f64> {
    check_rows(teacher, student)?;
    let mut total = 0.0;
    for (t_row, s_row) in teacher.iter().zip(student) {
        let p_t = softmax(t_row, tau)?;
        let p_s = softmax(s_row, tau)?;
        let mut row = 0.0;
        for (pt, ps) in p_t.iter().zip(&p_s) {
            if *pt > 0.0 {
                row += pt * (pt.ln() - ps.max(PROB_FLOOR).ln());
            }
        }
        total += row;
    }
    Ok(total / teacher.len() as f64)
}

/// KL loss plus gradient with respect to the student score rows:
/// (P_s - P_t) / (tau * rows).
pub fn kl_distill_grad(
    teacher: &[Vec<f64>],
    student: &[Vec<f64>],
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_rows(teacher, student)?;
    let rows = teacher.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(teacher.len());
    for (t_row, s_row) in teacher.iter().zip(student) {
        let p_t = softmax(t_row, tau)?;
        let p_s = softmax(s_row, tau)?;
        let mut row = 0.0;
        for (pt, ps) in p_t.iter().zip(&p_s) {
            if *pt > 0.0 {
                row += pt * (pt.ln() - ps.max(PROB_FLOOR).ln());
            }
        }
        total += row;
        grads.push(
            p_s.iter()
                .zip(&p_t)
                .map(|(ps, pt)| (ps - pt) / (tau * rows))
                .collect(),
        );
    }
    Ok((total / rows, grads))
}

/// Student score rows for a batch: per sample, cosine of the query against
/// [positive, negatives...].
pub fn student_score_rows(batch: &EmbeddedBatch) -> Result<Vec<Vec<f64>>> {
    batch.validate()?;
    let mut rows = Vec::with_capacity(batch.n());
    for i in 0..batch.n() {
        let mut row = Vec::with_capacity(1 + batch.m());
        row.push(crate::numerics::cosine_sim(&batch.queries[i], &batch.positives[i])?);
        for neg in &batch.hard_negatives[i] {
            row.push(crate::numerics::cosine_sim(&batch.queries[i], neg)?);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// KL distillation over a batch with gradients pushed through the student
/// cosine scores onto the raw embeddings.
pub(crate) fn kl_rows_grad(
    batch: &EmbeddedBatch,
    teacher_rows: &[Vec<f64>],
    tau: f64,
) -> Result<(f64, BatchGrads)> {
    let student = student_score_rows(batch)?;
    if teacher_rows.len() != batch.n() {
        return Err(Error::Data(format!(
            "teacher rows cover {} samples, batch has {}",
            teacher_rows.len(),
            batch.n()
        )));
    }
    let (value, dscores) = kl_distill_grad(teacher_rows, &student, tau)?;

    let mut grads = BatchGrads::zeros_like(batch);
    for i in 0..batch.n() {
        let q = &batch.queries[i];
        let qn = l2_norm(q);
        let qu: Vec<f64> = q.iter().map(|x| x / qn).collect();
        let mut candidates: Vec<(&[f64], &mut Vec<f64>)> = Vec::with_capacity(1 + batch.m());
        candidates.push((batch.positives[i].as_slice(), &mut grads.positives[i]));
        for (neg, g) in batch.hard_negatives[i].iter().zip(&mut grads.hard_negatives[i]) {
            candidates.push((neg.as_slice(), g));
        }
        for (c, (cand, g_cand)) in candidates.into_iter().enumerate() {
            let g = dscores[i][c];
            if g == 0.0 {
                continue;
            }
            let cn = l2_norm(cand);
            let cu: Vec<f64> = cand.iter().map(|x| x / cn).collect();
            let cos = dot(&qu, &cu);
            for idx in 0..q.len() {
                grads.queries[i][idx] += g * (cu[idx] - cos * qu[idx]) / qn;
                g_cand[idx] += g * (qu[idx] - cos * cu[idx]) / cn;
            }
        }
    }
    Ok((value, grads))
}

/// The two blended components of the distillation stage objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillParts {
    pub total: f64,
    pub cl: f64,
    pub kl: f64,
}

/// Stage-3 objective: cl_weight * (matryoshka Eq-7 loss at tau_cl)
/// + kl_weight * (matryoshka KL at tau_kl).
pub fn distill_objective(
    batch: &EmbeddedBatch,
    teacher_rows: &[Vec<f64>],
    cfg: &LossConfig,
    rng: &mut SeededRng,
) -> Result<DistillParts> {
    let draws = if cfg.enable_pairwise_mix {
        Some(sample_pairwise_draws(batch.n(), batch.m(), rng)?)
    } else {
        None
    };
    distill_objective_grad(batch, teacher_rows, cfg, draws.as_deref()).map(|(parts, _)| parts)
}

/// [`distill_objective`] under fixed draws, with gradients on the batch rows.
pub fn distill_objective_grad(
    batch: &EmbeddedBatch,
    teacher_rows: &[Vec<f64>],
    cfg: &LossConfig,
    draws: Option<&[PairwiseDraw]>,
) -> Result<(DistillParts, BatchGrads)> {
    batch.validate()?;
    cfg.validate(batch.dim())?;
    if teacher_rows.len() != batch.n() {
        return Err(Error::Data(format!(
            "teacher rows cover {} samples, batch has {}",
            teacher_rows.len(),
            batch.n()
        )));
    }
    for (i, row) in teacher_rows.iter().enumerate() {
        if row.len() != 1 + batch.m() {
            return Err(Error::Data(format!(
                "teacher row {i} has width {}, expected {}",
                row.len(),
                1 + batch.m()
            )));
        }
    }
    let (dims, weights) = cfg.effective_dims(batch.dim());

    let (cl, _, cl_grads) = mrl_contrastive_grad(batch, cfg, draws)?;
    let (kl, kl_grads) = mrl_kl_grad(batch, teacher_rows, cfg.tau_kl, &dims, &weights)?;

    let mut grads = BatchGrads::zeros_like(batch);
    grads.add_scaled(&cl_grads, cfg.cl_weight);
    grads.add_scaled(&kl_grads, cfg.kl_weight);

    Ok((
        DistillParts {
            total: cfg.cl_weight * cl + cfg.kl_weight * kl,
            cl,
            kl,
        },
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::l2_normalize;

    #[test]
    fn identical_rows_give_zero() {
        let rows = vec![vec![0.9, 0.1, -0.3], vec![0.2, 0.8, 0.0]];
        let kl = kl_distill_loss(&rows, &rows, 0.05).unwrap();
        assert_eq!(kl, 0.0);
    }

    #[test]
    fn swapped_logits_hand_value() {
        // z_t = [1, 0], z_s = [0, 1], tau = 1:
        // KL = 0.73106*1 + 0.26894*(-1) = 0.46212
        let kl = kl_distill_loss(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]], 1.0).unwrap();
        assert!((kl - 0.462117157).abs() < 1e-8, "kl {kl}");
    }

    #[test]
    fn kl_nonnegative_on_random_rows() {
        let mut rng = SeededRng::new(42);
        for _ in 0..100 {
            let width = 1 + rng.below(6);
            let t: Vec<f64> = (0..width).map(|_| rng.uniform_symmetric(2.0)).collect();
            let s: Vec<f64> = (0..width).map(|_| rng.uniform_symmetric(2.0)).collect();
            let kl = kl_distill_loss(&[t], &[s], 0.5).unwrap();
            assert!(kl >= 0.0, "kl {kl}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(matches!(
            kl_distill_loss(&[vec![1.0, 0.0]], &[vec![1.0]], 1.0),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            kl_distill_loss(&[vec![1.0]], &[vec![1.0], vec![0.5]], 1.0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn sharper_temperature_concentrates_teacher() {
        let row = vec![0.9, 0.4, 0.1, -0.2];
        let mut last_max = 0.0;
        for tau in [0.5, 0.2, 0.1, 0.05, 0.02] {
            let p = softmax(&row, tau).unwrap();
            let max = p.iter().cloned().fold(0.0, f64::max);
            assert!(max > last_max, "tau {tau}: {max} <= {last_max}");
            last_max = max;
        }
    }

    #[test]
    fn blend_weights_compose_linearly() {
        let unit = |v: &[f64]| l2_normalize(v).unwrap();
        let batch = EmbeddedBatch {
            queries: vec![unit(&[1.0, 0.1, 0.2, -0.4])],
            positives: vec![unit(&[0.9, 0.0, 0.3, -0.2])],
            hard_negatives: vec![vec![unit(&[0.0, 1.0, -0.5, 0.3]), unit(&[0.4, -0.6, 0.8, 0.0])]],
        };
        let teacher = student_score_rows(&batch).unwrap();
        let cfg = LossConfig {
            tau_cl: 0.5,
            tau_kl: 0.5,
            gamma: 0.5,
            cl_weight: 0.3,
            kl_weight: 0.7,
            ..LossConfig::default()
        };
        let mut rng = SeededRng::new(3);
        let parts = distill_objective(&batch, &teacher, &cfg, &mut rng).unwrap();
        assert!((parts.total - (0.3 * parts.cl + 0.7 * parts.kl)).abs() < 1e-12);
        // teacher == student at init: KL component starts at zero
        assert!(parts.kl.abs() < 1e-12);

        let only_cl = LossConfig {
            cl_weight: 1.0,
            kl_weight: 0.0,
            ..cfg.clone()
        };
        let p2 = distill_objective(&batch, &teacher, &only_cl, &mut rng).unwrap();
        assert!((p2.total - p2.cl).abs() < 1e-15);

        let only_kl = LossConfig {
            cl_weight: 0.0,
            kl_weight: 1.0,
            ..cfg
        };
        let p3 = distill_objective(&batch, &teacher, &only_kl, &mut rng).unwrap();
        assert!((p3.total - p3.kl).abs() < 1e-15);
    }

    #[test]
    fn missing_teacher_rows_is_data_error() {
        let unit = |v: &[f64]| l2_normalize(v).unwrap();
        let batch = EmbeddedBatch {
            queries: vec![unit(&[1.0, 0.0]), unit(&[0.0, 1.0])],
            positives: vec![unit(&[1.0, 0.1]), unit(&[0.1, 1.0])],
            hard_negatives: vec![Vec::new(), Vec::new()],
        };
        let cfg = LossConfig::default();
        let err = distill_objective_grad(&batch, &[vec![1.0]], &cfg, None).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
