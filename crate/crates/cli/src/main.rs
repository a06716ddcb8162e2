//! `embforge`: end-to-end pipeline driver. One subcommand per stage of the
//! workflow: curate, mine, pretrain, finetune, distill, teacher-cache, eval,
//! sweep, margin.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use embforge_core::Error;

#[derive(Parser)]
#[command(
    name = "embforge",
    version,
    about = "Train and evaluate a small bidirectional mean-pooled text encoder",
    disable_help_subcommand = true
)]
struct Cli {
    /// Print the full-scale reference hyperparameters next to the desk-scale
    /// defaults and exit.
    #[arg(long)]
    paper_defaults: bool,

    /// Seed override for any command that draws randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// JSON stage-config file (required by pretrain/finetune/distill).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Reformat scored pairs or labeled texts into training JSONL.
    Curate(CurateArgs),
    /// Mine rank-windowed hard negatives for training samples.
    Mine(MineArgs),
    /// Stage 1: contrastive pre-training with in-batch negatives only.
    Pretrain(StageArgs),
    /// Stage 2: fine-tuning with focal reweighting and negative mixing.
    Finetune(StageArgs),
    /// Stage 3: contrastive distillation against a cached teacher.
    Distill(StageArgs),
    /// Precompute teacher similarity rows for a training file.
    TeacherCache(TeacherCacheArgs),
    /// Retrieval evaluation: Recall@K and MRR@K over a task file.
    Eval(EvalArgs),
    /// Evaluate across truncated embedding dimensions.
    Sweep(SweepArgs),
    /// Positive-vs-hard-negative similarity margins per sample.
    Margin(MarginArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CurateMode {
    /// Scored text pairs -> two positive pairs per qualifying pair.
    Symmetric,
    /// Labeled texts -> label positives with label negatives.
    Asymmetric,
    /// Labeled texts -> same-class example positives (example-based labeling).
    Example,
}

#[derive(Args)]
struct CurateArgs {
    #[arg(long, value_enum)]
    mode: CurateMode,
    /// Scored-pair JSONL ({"text_a","text_b","score","scale"}).
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Labeled-text JSONL ({"text","label","dataset_id"}).
    #[arg(long)]
    labeled: Option<PathBuf>,
    /// Task instruction to attach to the emitted samples.
    #[arg(long)]
    instruction: Option<String>,
    /// Hard negatives per sample (label/example modes).
    #[arg(long, default_value_t = 7)]
    m: usize,
    /// Samples emitted per class in example mode.
    #[arg(long, default_value_t = 2)]
    samples_per_class: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MineArgs {
    /// Encoder checkpoint used to rank the pool.
    #[arg(long)]
    ckpt: PathBuf,
    /// Training JSONL to enrich with mined negatives.
    #[arg(long = "in")]
    input: PathBuf,
    /// Candidate pool, one passage per line.
    #[arg(long)]
    pool: PathBuf,
    /// Inclusive 1-indexed rank window LO,HI.
    #[arg(long, value_parser = parse_window, default_value = "50,100")]
    window: (usize, usize),
    #[arg(long, default_value_t = 7)]
    m: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StageArgs {
    /// Training JSONL.
    #[arg(long)]
    data: PathBuf,
    /// Starting checkpoint; omit to initialize randomly from the data vocab.
    #[arg(long)]
    init_ckpt: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-step metrics JSONL.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Teacher score cache (distill only).
    #[arg(long)]
    teacher_cache: Option<PathBuf>,
    /// Embedding dimension for fresh initialization.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Attention layers for fresh initialization.
    #[arg(long, default_value_t = 2)]
    layers: usize,
    /// Attention heads for fresh initialization.
    #[arg(long, default_value_t = 4)]
    heads: usize,
    /// Attention mask for fresh initialization.
    #[arg(long, value_enum, default_value_t = MaskArg::Bidirectional)]
    mask: MaskArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MaskArg {
    Bidirectional,
    Causal,
}

#[derive(Args)]
struct TeacherCacheArgs {
    /// Training JSONL the cache must cover.
    #[arg(long)]
    data: PathBuf,
    /// Teacher as an encoder checkpoint.
    #[arg(long, conflicts_with = "teacher_embeddings")]
    teacher_ckpt: Option<PathBuf>,
    /// Teacher as an embedding JSONL ({"sample_id","q","pos","negs"}).
    #[arg(long)]
    teacher_embeddings: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Task JSONL ({"query","instruction","positive_idx"}).
    #[arg(long)]
    task: PathBuf,
    /// Corpus, one passage per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Metric cutoffs.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    k: Vec<usize>,
    /// Truncate embeddings to this prefix dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    task: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Truncation dimensions to evaluate.
    #[arg(long, value_delimiter = ',', default_value = "64,32,16,8")]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    k: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MarginArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Training JSONL with hard negatives.
    #[arg(long)]
    data: PathBuf,
    /// Margin report JSONL (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_window(s: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected LO,HI, got {s:?}"));
    }
    let lo = parts[0].trim().parse().map_err(|e| format!("bad LO: {e}"))?;
    let hi = parts[1].trim().parse().map_err(|e| format!("bad HI: {e}"))?;
    Ok((lo, hi))
}

/// CLI failures carry the exit-code class with them.
pub(crate) enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

fn exit_code(err: &CliError) -> u8 {
    match err {
        CliError::Usage(_) => 1,
        CliError::Core(Error::Numeric(_)) | CliError::Core(Error::Domain(_)) => 3,
        CliError::Core(_) => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let mut cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };

    if let Ok(threads) = std::env::var("EMBFORGE_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: EMBFORGE_THREADS must be a positive integer");
                return ExitCode::from(1);
            }
        }
    }

    if cli.paper_defaults {
        commands::print_paper_defaults();
        return ExitCode::SUCCESS;
    }

    let Some(command) = cli.command.take() else {
        eprintln!("error: missing subcommand (see --help)");
        return ExitCode::from(1);
    };

    let result = match command {
        Command::Curate(args) => commands::curate(args, cli.seed),
        Command::Mine(args) => commands::mine(args, cli.seed),
        Command::Pretrain(args) => commands::stage(commands::StageKind::Pretrain, args, &cli),
        Command::Finetune(args) => commands::stage(commands::StageKind::Finetune, args, &cli),
        Command::Distill(args) => commands::stage(commands::StageKind::Distill, args, &cli),
        Command::TeacherCache(args) => commands::teacher_cache(args),
        Command::Eval(args) => commands::eval(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Margin(args) => commands::margin(args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match &err {
                CliError::Usage(msg) => eprintln!("usage error: {msg}"),
                CliError::Core(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
