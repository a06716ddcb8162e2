//! The three-stage training recipe: pre-training with in-batch negatives
//! only, fine-tuning with the full focal/mixing objective, and contrastive
//! distillation against a cached teacher. Single process, single device;
//! (seed, data, config) fully determines the resulting checkpoint.

mod adam;
mod teacher;

pub use adam::AdamState;
pub use teacher::{
    build_teacher_cache, sample_id, TeacherCache, TeacherEmbeddingRecord, TeacherSource,
};

use serde::{Deserialize, Serialize};

use crate::data::{assemble_batch_cached, TrainingSample};
use crate::encoder::{EncoderGrads, EncoderParams, Tokenizer};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use crate::objectives::{
    distill_objective_grad, mrl_contrastive_grad, sample_pairwise_draws, LossConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
    Distill,
}

/// Configuration of one training stage; the JSON config file mirrors these
/// field names exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: Stage,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub warmup_steps: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    pub loss: LossConfig,
    pub seed: u64,
}

fn default_epochs() -> usize {
    1
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.batch_size < 2 {
            log::warn!("batch_size 1 makes in-batch negatives vacuous");
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// One metrics-log line: {"step", "loss", "cl", "kl", "lr"}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub cl: f64,
    pub kl: Option<f64>,
    pub lr: f64,
}

/// Linear warmup to the configured rate, then constant.
fn lr_at(step: usize, cfg: &StageConfig) -> f64 {
    if cfg.warmup_steps > 0 && step < cfg.warmup_steps {
        cfg.learning_rate * (step + 1) as f64 / cfg.warmup_steps as f64
    } else {
        cfg.learning_rate
    }
}

/// Run one training stage over the data, returning the trained parameters
/// and the per-step metrics log.
pub fn run_stage(
    cfg: &StageConfig,
    data: &[TrainingSample],
    params: EncoderParams,
    tokenizer: &Tokenizer,
    teacher: Option<&TeacherCache>,
) -> Result<(EncoderParams, Vec<StepMetrics>)> {
    cfg.validate()?;
    cfg.loss.validate(params.config.dim)?;
    if data.is_empty() {
        return Err(Error::Data("run_stage: no training samples".into()));
    }
    for sample in data {
        sample.validate()?;
    }

    // Stage 1 uses the plain objective with in-batch negatives only: hard
    // negatives are stripped and mixing plus focal reweighting are disabled,
    // reducing the augmented loss to its base form.
    let (stage_data, stage_loss): (Vec<TrainingSample>, LossConfig) = match cfg.stage {
        Stage::Pretrain => (
            data.iter()
                .map(|s| TrainingSample {
                    hard_negatives: Vec::new(),
                    ..s.clone()
                })
                .collect(),
            LossConfig {
                gamma: 0.0,
                enable_pairwise_mix: false,
                enable_listwise_mix: false,
                ..cfg.loss.clone()
            },
        ),
        Stage::Finetune => (data.to_vec(), cfg.loss.clone()),
        Stage::Distill => (data.to_vec(), cfg.loss.clone()),
    };

    let teacher = match cfg.stage {
        Stage::Distill => {
            let cache = teacher.ok_or_else(|| {
                Error::Config("distill stage requires a teacher cache".into())
            })?;
            cache.verify_coverage(&stage_data)?;
            Some(cache)
        }
        _ => teacher,
    };

    let m = stage_data[0].hard_negatives.len();
    if stage_data.iter().any(|s| s.hard_negatives.len() != m) {
        return Err(Error::Data(
            "run_stage: samples must share the same negative count".into(),
        ));
    }

    let mut params = params;
    let mut flat = params.flatten();
    let mut adam = AdamState::new(flat.len());
    let mut rng = SeededRng::new(cfg.seed);
    let mut metrics = Vec::new();
    let mut step = 0usize;

    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..stage_data.len()).collect();
        rng.shuffle(&mut order);

        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<TrainingSample> =
                chunk.iter().map(|&i| stage_data[i].clone()).collect();
            let assembled = assemble_batch_cached(&samples, &params, tokenizer)?;
            let batch = &assembled.batch;

            let draws = if stage_loss.enable_pairwise_mix {
                Some(sample_pairwise_draws(batch.n(), batch.m(), &mut rng)?)
            } else {
                None
            };

            let (loss, cl, kl, grads) = match cfg.stage {
                Stage::Pretrain | Stage::Finetune => {
                    let (total, _, grads) =
                        mrl_contrastive_grad(batch, &stage_loss, draws.as_deref())?;
                    (total, total, None, grads)
                }
                Stage::Distill => {
                    let rows = teacher.unwrap().rows_for(chunk)?;
                    let (parts, grads) =
                        distill_objective_grad(batch, &rows, &stage_loss, draws.as_deref())?;
                    (parts.total, parts.cl, Some(parts.kl), grads)
                }
            };
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "run_stage: non-finite loss at step {step}"
                )));
            }

            let mut encoder_grads = EncoderGrads::zeros_like(&params);
            assembled.backward(&params, &grads, &mut encoder_grads)?;

            let lr = lr_at(step, cfg);
            adam.step(&mut flat, &encoder_grads.flatten(), lr)?;
            params.assign_from_flat(&flat)?;

            metrics.push(StepMetrics {
                step,
                loss,
                cl,
                kl,
                lr,
            });
            step += 1;
        }
    }

    Ok((params, metrics))
}
