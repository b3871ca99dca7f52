use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use rede_core::checkpoint::{round_to_f32, Checkpoint};
use rede_core::conversation::parse_record;
use rede_core::distance::{conversation_buckets, BucketMap};
use rede_core::init::{self, StatsOptions};
use rede_core::task::{generate_task, load_dataset, save_dataset, Dataset, Split, TaskConfig};
use rede_core::train::{self, build_model, evaluate, TrainConfig, UpdateScope};
use rede_core::{utterance_distance_matrix, EncoderModel, Mechanism, ParamGroup, Tokenizer, Vocab};

/// Bad input that is not a library validation error: unreadable files,
/// inconsistent flag combinations.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "rede", version, about = "Relative dependency encoding toolkit")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print clipped utterance distances and token-level buckets for a conversation.
    Distances(DistancesArgs),
    /// Mean, covariance and Cholesky factor of an embedding matrix.
    InitStats(InitStatsArgs),
    /// Draw dependency embeddings from saved statistics.
    Sample(SampleArgs),
    /// Generate the synthetic dependency-pointer task.
    GenTask(GenTaskArgs),
    /// Train one attention variant and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a generated task.
    Eval(EvalArgs),
    /// Train and test every variant over several seeds.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Debug, Args)]
struct DistancesArgs {
    /// Conversation JSON file, or `-` for stdin.
    input: PathBuf,
    #[arg(long, default_value_t = rede_core::distance::DEFAULT_TAU)]
    tau: usize,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct InitStatsArgs {
    /// V×d matrix in .npy format (float32 or float64).
    #[arg(long)]
    embeddings: PathBuf,
    /// Where to write the statistics (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Keep per-coordinate variances only.
    #[arg(long)]
    diag_cov: bool,
    #[arg(long, default_value_t = init::DEFAULT_JITTER)]
    jitter: f64,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    stats: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output .npy file (float32).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenTaskArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run config (JSON); only its `task` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    variant: Mechanism,
    #[arg(long, default_value = "all")]
    scope: UpdateScope,
    /// Run config (JSON) with optional `task` and `train` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Task directory from `gen-task`; generated from the config when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Start from this checkpoint's base weights (for example a vanilla model
    /// before dependency-only training).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Overrides the config's training seed; also seeds task generation.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Seeds 0..k.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated subset of variants.
    #[arg(long, value_delimiter = ',', default_values_t = Mechanism::ALL.to_vec())]
    variants: Vec<Mechanism>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
}

/// Contents of a `--config` file. Both sections are optional and default
/// field by field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub train: TrainConfig,
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf).context("reading stdin")?;
        return Ok(buf);
    }
    std::fs::read(path).map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let bytes = read_input(path)?;
    serde_json::from_slice(&bytes).map_err(|e| input_error(format!("{}: invalid config: {e}", path.display())))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn log_config(what: &str, value: &impl Serialize) {
    if log::log_enabled!(log::Level::Info) {
        log::info!("{what}: {}", serde_json::to_string(value).unwrap_or_default());
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Distances(a) => distances(a),
        Command::InitStats(a) => init_stats(a),
        Command::Sample(a) => sample(a),
        Command::GenTask(a) => gen_task(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare(a),
    }
}

#[derive(Serialize)]
struct DistancesReport {
    tau: usize,
    utterances: usize,
    distances: Vec<Vec<rede_core::RelDistance>>,
    tokens: Vec<String>,
    token_utterance: Vec<Option<usize>>,
    token_buckets: Vec<Vec<usize>>,
}

fn distances(a: DistancesArgs) -> Result<()> {
    let map = BucketMap::new(a.tau)?;
    let bytes = read_input(&a.input)?;
    let record = parse_record(&bytes)?;
    let tokenizer = Tokenizer::new(Vocab::build(record.texts()), false);
    let conv = record.into_conversation(&tokenizer)?;
    let matrix = utterance_distance_matrix(&conv.tree, map.tau);
    let grid = conversation_buckets(&conv, map.tau)?;
    let report = DistancesReport {
        tau: map.tau,
        utterances: conv.utterance_count(),
        distances: matrix.to_nested(),
        tokens: conv
            .tokens
            .iter()
            .map(|&t| tokenizer.vocab.word(t).unwrap_or("<unk>").to_string())
            .collect(),
        token_utterance: conv.token_to_utt.clone(),
        token_buckets: grid.buckets.rows().into_iter().map(|r| r.to_vec()).collect(),
    };
    match a.format {
        Format::Json => print_json(&report),
        Format::Text => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "utterance distances (tau = {})", report.tau)?;
            write_table(&mut out, &report.distances)?;
            writeln!(out)?;
            writeln!(out, "token buckets ({} = no relation)", map.inf_bucket())?;
            write_table(&mut out, &report.token_buckets)?;
            Ok(())
        }
    }
}

fn write_table<T: std::fmt::Display>(out: &mut impl Write, rows: &[Vec<T>]) -> std::io::Result<()> {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| r.iter().map(ToString::to_string).collect())
        .collect();
    let width = cells.iter().flatten().map(String::len).max().unwrap_or(1);
    for row in cells {
        let line: Vec<String> = row.iter().map(|c| format!("{c:>width$}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

fn init_stats(a: InitStatsArgs) -> Result<()> {
    if !a.embeddings.exists() {
        return Err(input_error(format!(
            "cannot read {}: no such file",
            a.embeddings.display()
        )));
    }
    let embeddings = init::read_matrix(&a.embeddings)?;
    let opts = StatsOptions {
        jitter: a.jitter,
        diagonal: a.diag_cov,
    };
    log_config("stats options", &opts);
    let stats = init::compute_stats_with(&embeddings, opts)?;
    stats.save_json(&a.out)?;
    print_json(&serde_json::json!({
        "rows": embeddings.nrows(),
        "dim": stats.dim(),
        "jitter": stats.jitter,
        "out": a.out,
    }))
}

fn sample(a: SampleArgs) -> Result<()> {
    if !a.stats.exists() {
        return Err(input_error(format!("cannot read {}: no such file", a.stats.display())));
    }
    let stats = init::EmbeddingStats::load_json(&a.stats)?;
    let draws = init::sample_dependency_embeddings(&stats, a.count, a.seed);
    init::write_matrix(&a.out, &draws)?;
    print_json(&serde_json::json!({
        "count": a.count,
        "dim": stats.dim(),
        "seed": a.seed,
        "out": a.out,
    }))
}

fn gen_task(a: GenTaskArgs) -> Result<()> {
    let cfg = load_run_config(a.config.as_deref())?;
    log_config("task config", &cfg.task);
    let data = generate_task(&cfg.task, a.seed)?;
    save_dataset(&data, &a.out)?;
    print_json(&serde_json::json!({
        "out": a.out,
        "seed": a.seed,
        "train": data.train.len(),
        "dev": data.dev.len(),
        "test": data.test.len(),
        "chance_rate": cfg.task.chance_rate(),
    }))
}

#[derive(Serialize)]
struct TrainSummary {
    variant: Mechanism,
    scope: UpdateScope,
    steps: usize,
    parameters: usize,
    final_loss: Option<f64>,
    dev_accuracy: f64,
    test_accuracy: f64,
    checkpoint: PathBuf,
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = load_run_config(a.config.as_deref())?;
    cfg.train.mechanism = a.variant;
    cfg.train.scope = a.scope;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    cfg.train.validate()?;
    let data = match &a.data {
        Some(dir) => load_dataset(dir)?,
        None => generate_task(&cfg.task, cfg.train.seed)?,
    };
    cfg.task = data.config.clone();
    log_config("resolved config", &cfg);

    let mut model = build_model(
        &cfg.train,
        data.vocab.len(),
        data.config.classes,
        data.config.max_sequence_len(),
    )?;
    if let Some(path) = &a.init {
        let start = Checkpoint::load(path)?;
        if start.vocab.as_ref().is_some_and(|v| *v != data.vocab) {
            return Err(input_error(format!(
                "{}: vocabulary differs from the task's",
                path.display()
            )));
        }
        copy_base(&start.model, &mut model)?;
    }
    let (mut model, trace) = train::train(model, &data.train, &cfg.train)?;
    // evaluate exactly what the checkpoint will hold
    round_to_f32(&mut model);
    let dev = evaluate(&model, &data.dev)?;
    let test = evaluate(&model, &data.test)?;
    let summary = TrainSummary {
        variant: cfg.train.mechanism,
        scope: cfg.train.scope,
        steps: trace.losses.len(),
        parameters: model.parameter_count(),
        final_loss: trace.final_loss(),
        dev_accuracy: dev.accuracy,
        test_accuracy: test.accuracy,
        checkpoint: a.out.clone(),
    };
    Checkpoint {
        model,
        vocab: Some(data.vocab.clone()),
    }
    .save(&a.out)?;
    print_json(&summary)
}

/// Copies every BASE tensor of `from` into `to`, matching by name and shape.
fn copy_base(from: &EncoderModel, to: &mut EncoderModel) -> Result<()> {
    let source = from.tensors();
    let mut missing = Vec::new();
    for (name, group, dst) in to.tensors_mut() {
        if group != ParamGroup::Base {
            continue;
        }
        match source.iter().find(|(n, _, _)| *n == name) {
            Some((_, _, src)) if src.dim() == dst.dim() => dst.assign(src),
            Some((_, _, src)) => {
                return Err(input_error(format!(
                    "initial checkpoint tensor {name} is {:?}, model needs {:?}",
                    src.dim(),
                    dst.dim()
                )))
            }
            None => missing.push(name),
        }
    }
    if !missing.is_empty() {
        return Err(input_error(format!("initial checkpoint lacks {}", missing.join(", "))));
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if !a.ckpt.exists() {
        return Err(input_error(format!("cannot read {}: no such file", a.ckpt.display())));
    }
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let data: Dataset = load_dataset(&a.data)?;
    if ckpt.vocab.as_ref().is_some_and(|v| *v != data.vocab) {
        return Err(input_error("checkpoint vocabulary differs from the task's"));
    }
    if ckpt.model.config.classes != data.config.classes {
        return Err(input_error(format!(
            "checkpoint predicts {} classes, task has {}",
            ckpt.model.config.classes, data.config.classes
        )));
    }
    let report = evaluate(&ckpt.model, data.split(a.split.into()))?;
    print_json(&report)
}

fn compare(a: CompareArgs) -> Result<()> {
    if a.seeds == 0 {
        return Err(input_error("--seeds must be at least 1"));
    }
    let mut cfg = load_run_config(a.config.as_deref())?;
    if let Some(steps) = a.steps {
        cfg.train.steps = steps;
    }
    if let Some(n) = a.train_size {
        cfg.task.train_size = n;
    }
    if let Some(n) = a.test_size {
        cfg.task.test_size = n;
    }
    log_config("resolved config", &cfg);
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let report = train::compare(&cfg.task, &cfg.train, &seeds, &a.variants)?;
    print_json(&report)
}
