use std::collections::BTreeMap;
use std::path::Path;

use embforge_core::data::{
    example_based_labeling, mine_hard_negatives, process_asymmetric, process_symmetric,
    CandidatePool, LabeledText, ScoredPair, TrainingSample,
};
use embforge_core::encoder::{
    load_checkpoint, save_checkpoint, EncoderConfig, EncoderParams, MaskMode, Tokenizer,
};
use embforge_core::error::Error;
use embforge_core::evaluation::{evaluate, margin_report, matryoshka_sweep, RetrievalTask, TaskQuery};
use embforge_core::ioutil::{read_jsonl, read_lines, write_atomic, write_jsonl};
use embforge_core::numerics::SeededRng;
use embforge_core::training::{
    build_teacher_cache, run_stage, Stage, StageConfig, TeacherCache, TeacherEmbeddingRecord,
    TeacherSource,
};

use crate::{
    Cli, CliError, CurateArgs, CurateMode, EvalArgs, MarginArgs, MaskArg, MineArgs, StageArgs,
    SweepArgs, TeacherCacheArgs,
};

type CliResult = Result<(), CliError>;

const SYMMETRIC_INSTRUCTION: &str = "Retrieve semantically similar text";
const LABELING_INSTRUCTION: &str = "Categorizing the given text";

pub(crate) fn curate(args: CurateArgs, seed: Option<u64>) -> CliResult {
    let mut rng = SeededRng::new(seed.unwrap_or(0));
    let samples = match args.mode {
        CurateMode::Symmetric => {
            let path = args
                .pairs
                .as_ref()
                .ok_or_else(|| CliError::Usage("--mode symmetric requires --pairs".into()))?;
            let pairs: Vec<ScoredPair> = read_jsonl(path)?;
            let instruction = args
                .instruction
                .as_deref()
                .unwrap_or(SYMMETRIC_INSTRUCTION);
            process_symmetric(&pairs, instruction)?
        }
        CurateMode::Asymmetric => {
            let items = read_labeled(&args)?;
            let instruction = args.instruction.as_deref().unwrap_or(LABELING_INSTRUCTION);
            // Global top-up pool: every distinct label across datasets.
            let mut global = Vec::new();
            for item in &items {
                if !global.contains(&item.label) {
                    global.push(item.label.clone());
                }
            }
            process_asymmetric(&items, &global, args.m, instruction, &mut rng)?
        }
        CurateMode::Example => {
            let items = read_labeled(&args)?;
            let instruction = args.instruction.as_deref().unwrap_or(LABELING_INSTRUCTION);
            let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for item in &items {
                groups
                    .entry(format!("{}::{}", item.dataset_id, item.label))
                    .or_default()
                    .push(item.text.clone());
            }
            example_based_labeling(&groups, args.samples_per_class, args.m, instruction, &mut rng)?
        }
    };
    write_jsonl(&args.out, &samples)?;
    println!("wrote {} training samples to {}", samples.len(), args.out.display());
    Ok(())
}

fn read_labeled(args: &CurateArgs) -> Result<Vec<LabeledText>, CliError> {
    let path = args
        .labeled
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("--mode {} requires --labeled", mode_name(args.mode))))?;
    Ok(read_jsonl(path)?)
}

fn mode_name(mode: CurateMode) -> &'static str {
    match mode {
        CurateMode::Symmetric => "symmetric",
        CurateMode::Asymmetric => "asymmetric",
        CurateMode::Example => "example",
    }
}

pub(crate) fn mine(args: MineArgs, seed: Option<u64>) -> CliResult {
    let (params, tokenizer) = load_checkpoint(&args.ckpt)?;
    let samples: Vec<TrainingSample> = read_jsonl(&args.input)?;
    let pool = CandidatePool::new(read_lines(&args.pool)?)?;
    let mut rng = SeededRng::new(seed.unwrap_or(0));
    let mined = mine_hard_negatives(
        &params,
        &tokenizer,
        &samples,
        &pool,
        args.window,
        args.m,
        &mut rng,
    )?;
    write_jsonl(&args.out, &mined)?;
    println!(
        "mined {} negatives for {} samples into {}",
        args.m,
        mined.len(),
        args.out.display()
    );
    Ok(())
}

pub(crate) enum StageKind {
    Pretrain,
    Finetune,
    Distill,
}

pub(crate) fn stage(kind: StageKind, args: StageArgs, cli: &Cli) -> CliResult {
    let stage = match kind {
        StageKind::Pretrain => Stage::Pretrain,
        StageKind::Finetune => Stage::Finetune,
        StageKind::Distill => Stage::Distill,
    };
    let config_path = cli.config.as_ref().ok_or_else(|| {
        CliError::Usage(format!("{} requires --config", stage_name(stage)))
    })?;
    let bytes = std::fs::read(config_path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", config_path.display())))?;
    let mut config: StageConfig = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Config(format!("invalid stage config: {e}")))?;
    if config.stage != stage {
        return Err(CliError::Core(Error::Config(format!(
            "config file declares stage {:?} but the {} command was invoked",
            config.stage,
            stage_name(stage)
        ))));
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    let data: Vec<TrainingSample> = read_jsonl(&args.data)?;
    let (params, tokenizer) = match &args.init_ckpt {
        Some(path) => load_checkpoint(path)?,
        None => fresh_init(&args, &data, config.seed)?,
    };

    let teacher = match stage {
        Stage::Distill => {
            let path = args.teacher_cache.as_ref().ok_or_else(|| {
                CliError::Core(Error::Config("distill requires --teacher-cache".into()))
            })?;
            Some(TeacherCache::load(path)?)
        }
        _ => None,
    };

    let (trained, metrics) = run_stage(&config, &data, params, &tokenizer, teacher.as_ref())?;
    save_checkpoint(&args.out, &trained, &tokenizer)?;
    if let Some(metrics_path) = &args.metrics {
        write_jsonl(metrics_path, &metrics)?;
    }
    let final_loss = metrics.last().map(|m| m.loss);
    println!(
        "{}",
        serde_json::json!({
            "stage": stage_name(stage),
            "steps": metrics.len(),
            "final_loss": final_loss,
            "checkpoint": args.out.display().to_string(),
        })
    );
    Ok(())
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Pretrain => "pretrain",
        Stage::Finetune => "finetune",
        Stage::Distill => "distill",
    }
}

/// Build a tokenizer over every text the data can present to the encoder and
/// initialize parameters from the stage seed.
fn fresh_init(
    args: &StageArgs,
    data: &[TrainingSample],
    seed: u64,
) -> Result<(EncoderParams, Tokenizer), CliError> {
    let mut texts: Vec<String> = Vec::new();
    for sample in data {
        texts.push(embforge_core::data::format_query(
            &sample.instruction,
            &sample.query,
        )?);
        if sample.symmetric && !sample.instruction.is_empty() {
            texts.push(embforge_core::data::format_query(
                &sample.instruction,
                &sample.positive,
            )?);
        } else {
            texts.push(sample.positive.clone());
        }
        for neg in &sample.hard_negatives {
            texts.push(neg.clone());
        }
    }
    let tokenizer = Tokenizer::from_corpus(texts.iter().map(String::as_str), 512);
    let mask = match args.mask {
        MaskArg::Bidirectional => MaskMode::Bidirectional,
        MaskArg::Causal => MaskMode::Causal,
    };
    let config = EncoderConfig::new(args.dim, args.heads, args.layers, mask);
    let mut rng = SeededRng::new(seed);
    let params = EncoderParams::init(config, tokenizer.vocab_size(), &mut rng)?;
    Ok((params, tokenizer))
}

pub(crate) fn teacher_cache(args: TeacherCacheArgs) -> CliResult {
    let data: Vec<TrainingSample> = read_jsonl(&args.data)?;
    let cache = match (&args.teacher_ckpt, &args.teacher_embeddings) {
        (Some(ckpt), None) => {
            let (params, tokenizer) = load_checkpoint(ckpt)?;
            build_teacher_cache(&TeacherSource::Checkpoint(&params, &tokenizer), &data)?
        }
        (None, Some(path)) => {
            let records: Vec<TeacherEmbeddingRecord> = read_jsonl(path)?;
            build_teacher_cache(&TeacherSource::Embeddings(&records), &data)?
        }
        _ => {
            return Err(CliError::Usage(
                "provide exactly one of --teacher-ckpt or --teacher-embeddings".into(),
            ))
        }
    };
    cache.save(&args.out)?;
    println!("cached {} teacher rows to {}", cache.len(), args.out.display());
    Ok(())
}

fn load_task(task_path: &Path, corpus_path: &Path) -> Result<RetrievalTask, CliError> {
    let queries: Vec<TaskQuery> = read_jsonl(task_path)?;
    let corpus = CandidatePool::new(read_lines(corpus_path)?)?;
    Ok(RetrievalTask::new(queries, corpus)?)
}

pub(crate) fn eval(args: EvalArgs) -> CliResult {
    let (params, tokenizer) = load_checkpoint(&args.ckpt)?;
    let task = load_task(&args.task, &args.corpus)?;
    let ckpt_id = args.ckpt.display().to_string();
    let run = evaluate(&params, &tokenizer, &task, &args.k, args.dim, &ckpt_id)?;
    let report = serde_json::to_string_pretty(&run).map_err(Error::Json)?;
    println!("{report}");
    if let Some(out) = &args.out {
        write_atomic(out, report.as_bytes())?;
    }
    Ok(())
}

pub(crate) fn sweep(args: SweepArgs) -> CliResult {
    let (params, tokenizer) = load_checkpoint(&args.ckpt)?;
    let task = load_task(&args.task, &args.corpus)?;
    let rows = matryoshka_sweep(&params, &tokenizer, &task, &args.dims, &args.k)?;
    let report = serde_json::to_string_pretty(&rows).map_err(Error::Json)?;
    println!("{report}");
    if let Some(out) = &args.out {
        write_atomic(out, report.as_bytes())?;
    }
    Ok(())
}

pub(crate) fn margin(args: MarginArgs) -> CliResult {
    let (params, tokenizer) = load_checkpoint(&args.ckpt)?;
    let samples: Vec<TrainingSample> = read_jsonl(&args.data)?;
    let rows = margin_report(&params, &tokenizer, &samples)?;
    match &args.out {
        Some(out) => {
            write_jsonl(out, &rows)?;
            println!("wrote {} margin rows to {}", rows.len(), out.display());
        }
        None => {
            for row in &rows {
                println!("{}", serde_json::to_string(row).map_err(Error::Json)?);
            }
        }
    }
    Ok(())
}

pub(crate) fn print_paper_defaults() {
    let rows: [(&str, &str, &str); 18] = [
        ("parameter", "full-scale reference", "desk-scale default"),
        ("batch size (pretrain/finetune/distill)", "512 / 120 / 120", "32 / 16 / 16"),
        ("devices", "48 / 4 / 2 GPUs", "1 CPU core"),
        ("training steps", "19k / 12k / 24k", "hundreds per stage"),
        ("training data size", "470M / 6M / 6M samples", "toy corpora"),
        ("warm-up steps", "10% / 200 / 200", "config `warmup_steps`"),
        ("learning rate", "1e-4 / 2e-5 / 1e-5", "1e-2 / 3e-3 / 1e-3"),
        ("epochs", "1 (all stages)", "1 (all stages)"),
        ("base model", "0.5B decoder LLM, bidirectional", "toy transformer, bidirectional"),
        ("pooling", "mean pooling", "mean pooling"),
        ("embedding dimension", "896", "64"),
        ("maximum input length", "512", "512"),
        ("MRL dimensions", "896, 512, 256, 128, 64", "64, 32, 16, 8"),
        ("MRL weights", "1.0, 0.3, 0.2, 0.1, 0.1", "1.0, 0.3, 0.2, 0.1"),
        ("focusing parameter gamma", "0.5", "0.5"),
        ("hard negatives", "M=7, ranks 50-100", "M=7, ranks 50-100"),
        ("optimizer / precision", "Adam, bfloat16", "Adam, float64"),
        ("temperatures (contrastive / distill)", "0.01 / 0.05", "0.01 / 0.05"),
    ];
    for (name, reference, desk) in rows {
        println!("{name:<40} {reference:<34} {desk}");
    }
    println!("{:<40} {:<34} {}", "teacher model", "8B embedding model", "any checkpoint or embedding file");
}
