//! Command-line driver: synthetic data generation, meta-training,
//! pretraining, fine-tuning, transfer, and evaluation, all from one run
//! configuration file. Flags override the file; the `ST2_SEED` environment
//! variable fills in the seed when neither a flag nor the file sets one.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or artifact error,
//! 4 training diverged.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use st2_core::autodiff::ParamSet;
use st2_core::checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointKind, ModelSpec,
};
use st2_core::config::{load_config, RunConfig};
use st2_core::corpus::{dataset_text_files, load_dataset_with, StyleTask, Vocabulary};
use st2_core::error::{
    CheckpointError, ConfigError, DataError, MetaError, MetricError, ModelError,
};
use st2_core::eval::{evaluate_task, transfer_corpus, EvalModel, EvalOptions};
use st2_core::meta::adapters::{CrossAlignMeta, VaeMeta};
use st2_core::meta::{finetune, pretrain_base, train_meta, MetaConfig, StepRecord};
use st2_core::metrics::{
    crossalign_embeddings, train_classifier, vae_embeddings, write_embeddings_csv, AccuracyMode,
    EmbeddingTable, MetricReport, TransferClassifier,
};
use st2_core::models::{CrossAlign, Vae};
use st2_core::synth::{write_dataset, StyleKind, SyntheticTaskSpec};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("refusing to overwrite non-empty directory {0}")]
    RefusingOverwrite(PathBuf),
    #[error("missing dependency: {0}")]
    MissingDependency(String),
    #[error(
        "configuration hash mismatch: model {model} vs classifier {classifier}; \
         pass --force to evaluate anyway"
    )]
    HashMismatch { model: String, classifier: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Meta(MetaError::DivergedAdaptation { .. }) => 4,
            CliError::Meta(MetaError::Model(ModelError::NonFinite)) => 4,
            CliError::Meta(MetaError::InvalidArgument(_)) => 2,
            CliError::Meta(_) => 3,
            CliError::Model(ModelError::NonFinite) => 4,
            CliError::Model(ModelError::InvalidArgument(_)) => 2,
            CliError::Model(_) => 3,
            CliError::Metric(MetricError::Model(ModelError::NonFinite)) => 4,
            CliError::Metric(MetricError::InvalidArgument(_)) => 2,
            CliError::Metric(_) => 3,
            CliError::Data(_)
            | CliError::Checkpoint(_)
            | CliError::RefusingOverwrite(_)
            | CliError::MissingDependency(_)
            | CliError::HashMismatch { .. }
            | CliError::Io { .. } => 3,
        }
    }
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Parser)]
#[command(
    name = "st2",
    version,
    about = "Few-shot text style transfer: meta-training, transfer, evaluation"
)]
struct Cli {
    /// Worker threads for task-parallel phases; 0 means one per core.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic style-pair dataset tree.
    GenSynthetic(GenSyntheticArgs),
    /// Build the shared vocabulary and report the dataset shape.
    Prepare(ConfigArgs),
    /// Meta-train the base model over every task in the dataset.
    TrainMeta(TrainMetaArgs),
    /// Train only the reconstruction pathway on the pooled corpus.
    Pretrain(ConfigArgs),
    /// Specialize a checkpoint on one task's full training split.
    Finetune(FinetuneArgs),
    /// Rewrite the sentences of a file into the target style.
    Transfer(TransferArgs),
    /// Score a checkpoint's transfers with the automatic metric suite.
    Evaluate(EvaluateArgs),
    /// Train the style classifier used for transfer accuracy.
    TrainClassifier(ConfigArgs),
    /// Dump one task's style and content embeddings to CSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Seed override; wins over the config file and ST2_SEED.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    LexiconSwap,
    AffixMarker,
    SynonymTable,
}

impl From<KindArg> for StyleKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::LexiconSwap => StyleKind::LexiconSwap,
            KindArg::AffixMarker => StyleKind::AffixMarker,
            KindArg::SynonymTable => StyleKind::SynonymTable,
        }
    }
}

#[derive(Args)]
struct GenSyntheticArgs {
    /// Dataset root to create; must be absent or empty.
    #[arg(long)]
    out: PathBuf,
    /// Number of task directories.
    #[arg(long)]
    tasks: usize,
    #[arg(long, value_enum, default_value_t = KindArg::LexiconSwap)]
    kind: KindArg,
    #[arg(long, default_value_t = 200)]
    vocab_size: usize,
    #[arg(long, default_value_t = 2000)]
    per_side: usize,
    #[arg(long, default_value_t = 3)]
    min_len: usize,
    #[arg(long, default_value_t = 9)]
    max_len: usize,
    /// Parallel test pairs per task (written to test.tsv).
    #[arg(long, default_value_t = 64)]
    test_pairs: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainMetaArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Outer-step budget override.
    #[arg(long)]
    steps: Option<usize>,
    /// Also write an intermediate checkpoint every N outer steps.
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Task to specialize on.
    #[arg(long)]
    task: String,
    /// Checkpoint to start from.
    #[arg(long)]
    from: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct TransferArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Task naming the styles; defaults to a task-specialized checkpoint's
    /// own task.
    #[arg(long)]
    task: Option<String>,
    /// One source sentence per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    source_style: String,
    #[arg(long)]
    target_style: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group = ArgGroup::new("scope").required(true))]
struct EvaluateArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Classifier checkpoint for transfer accuracy.
    #[arg(long)]
    classifier: PathBuf,
    /// Score one task.
    #[arg(long, group = "scope")]
    task: Option<String>,
    /// Score every task and write the averaged report.
    #[arg(long, group = "scope")]
    all_tasks: bool,
    /// Report destination; defaults into the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate even when model and classifier come from different
    /// configurations.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    task: String,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
    {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::GenSynthetic(a) => cmd_gen_synthetic(&a),
        Cmd::Prepare(a) => cmd_prepare(&a),
        Cmd::TrainMeta(a) => cmd_train_meta(&a),
        Cmd::Pretrain(a) => cmd_pretrain(&a),
        Cmd::Finetune(a) => cmd_finetune(&a),
        Cmd::Transfer(a) => cmd_transfer(&a),
        Cmd::Evaluate(a) => cmd_evaluate(&a),
        Cmd::TrainClassifier(a) => cmd_train_classifier(&a),
        Cmd::ExportEmbeddings(a) => cmd_export_embeddings(&a),
    }
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var("ST2_SEED") {
        Ok(text) => {
            let parsed = text.trim().parse().map_err(|_| {
                CliError::Config(ConfigError::Invalid {
                    field: "ST2_SEED",
                    message: format!("not an unsigned integer: {text:?}"),
                })
            })?;
            Ok(Some(parsed))
        }
        Err(_) => Ok(None),
    }
}

/// Loads the config and resolves the seed: flag, then file, then ST2_SEED,
/// then zero. The meta section always inherits the resolved seed.
fn resolve_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let (mut cfg, seed_in_file) = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    } else if !seed_in_file {
        if let Some(seed) = env_seed()? {
            cfg.seed = seed;
        }
    }
    cfg.meta.seed = cfg.seed;
    Ok(cfg)
}

struct Workspace {
    cfg: RunConfig,
    vocab: Vocabulary,
    tasks: Vec<StyleTask>,
    hash: String,
    run_toml: String,
}

/// Validates the final config, loads vocabulary and tasks, and persists
/// `config.toml` plus `vocab.txt` into the output directory so any artifact
/// can be traced back to the exact run settings.
fn open_workspace(cfg: RunConfig) -> Result<Workspace, CliError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(io_at(&cfg.output_dir))?;
    let vocab_path = cfg.output_dir.join("vocab.txt");
    let vocab = if vocab_path.is_file() {
        Vocabulary::load(&vocab_path)?
    } else {
        let files = dataset_text_files(&cfg.dataset_root)?;
        let refs: Vec<&Path> = files.iter().map(|p| p.as_path()).collect();
        let v = Vocabulary::build(&refs, cfg.vocab_min_count)?;
        v.save(&vocab_path)?;
        v
    };
    let tasks = load_dataset_with(
        &cfg.dataset_root,
        &vocab,
        cfg.support_fraction,
        cfg.seed,
        cfg.max_seq_len,
    )?;
    let hash = cfg.hash()?;
    let run_toml = cfg.to_toml()?;
    let cfg_copy = cfg.output_dir.join("config.toml");
    fs::write(&cfg_copy, &run_toml).map_err(io_at(&cfg_copy))?;
    Ok(Workspace {
        cfg,
        vocab,
        tasks,
        hash,
        run_toml,
    })
}

impl Workspace {
    fn find_task(&self, id: &str) -> Result<&StyleTask, CliError> {
        self.tasks
            .iter()
            .find(|t| t.task_id == id)
            .ok_or_else(|| CliError::Data(DataError::UnknownTask(id.to_string())))
    }

    fn checkpoint(&self, kind: CheckpointKind, spec: ModelSpec, ps: &ParamSet) -> Checkpoint {
        Checkpoint::new(kind, spec, self.hash.as_str(), ps)
            .with_run_config(self.run_toml.as_str())
    }

    fn save(&self, name: &str, ck: &Checkpoint) -> Result<PathBuf, CliError> {
        let path = self.cfg.output_dir.join(name);
        save_checkpoint(&path, ck)?;
        Ok(path)
    }
}

/// Both base models behind the meta-training entry points.
enum Driver {
    CrossAlign(CrossAlignMeta),
    Vae(VaeMeta),
}

fn build_driver(spec: &ModelSpec, batch_size: usize, kl_warmup: u64) -> Result<Driver, CliError> {
    match spec {
        ModelSpec::CrossAlign { config } => Ok(Driver::CrossAlign(CrossAlignMeta {
            model: CrossAlign::new(config.clone()),
            batch_size,
        })),
        ModelSpec::Vae { config, weights } => {
            let mut m = VaeMeta::new(Vae::new(config.clone()), batch_size);
            m.weights = *weights;
            m.kl_warmup = kl_warmup;
            Ok(Driver::Vae(m))
        }
        ModelSpec::Classifier { .. } => Err(CliError::Checkpoint(CheckpointError::KindMismatch {
            expected: "a base model".to_string(),
            found: "classifier".to_string(),
        })),
    }
}

fn cmd_gen_synthetic(a: &GenSyntheticArgs) -> Result<(), CliError> {
    if a.out.exists() {
        let mut entries = fs::read_dir(&a.out).map_err(io_at(&a.out))?;
        if entries.next().is_some() {
            return Err(CliError::RefusingOverwrite(a.out.clone()));
        }
    }
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let spec = SyntheticTaskSpec {
        kind: a.kind.into(),
        vocab_size: a.vocab_size,
        sentences_per_side: a.per_side,
        len_range: (a.min_len, a.max_len),
        test_pairs: a.test_pairs,
        seed,
    };
    spec.validate()?;
    write_dataset(&spec, a.tasks, &a.out)?;
    println!("wrote {} tasks under {}", a.tasks, a.out.display());
    Ok(())
}

fn cmd_prepare(a: &ConfigArgs) -> Result<(), CliError> {
    let ws = open_workspace(resolve_config(a)?)?;
    println!(
        "vocabulary: {} entries (min count {})",
        ws.vocab.len(),
        ws.cfg.vocab_min_count
    );
    println!("tasks: {}", ws.tasks.len());
    for t in &ws.tasks {
        println!(
            "  {}: {} {} + {} {} sentences, {} test pairs",
            t.task_id,
            t.train_a.len(),
            t.style_a,
            t.train_b.len(),
            t.style_b,
            t.test_pairs.as_ref().map_or(0, |p| p.len()),
        );
    }
    println!("config hash {}", ws.hash);
    Ok(())
}

fn run_meta_loop(
    driver: &Driver,
    theta0: &ParamSet,
    tasks: &[StyleTask],
    meta_cfg: &MetaConfig,
    mut sink: impl FnMut(&StepRecord, &ParamSet) -> Result<(), CliError>,
) -> Result<(ParamSet, Vec<StepRecord>), CliError> {
    let mut sink_err = None;
    let mut hook = |rec: &StepRecord, ps: &ParamSet| match sink(rec, ps) {
        Ok(()) => true,
        Err(e) => {
            sink_err = Some(e);
            false
        }
    };
    let result = match driver {
        Driver::CrossAlign(m) => train_meta(m, theta0, tasks, meta_cfg, &mut hook),
        Driver::Vae(m) => train_meta(m, theta0, tasks, meta_cfg, &mut hook),
    };
    if let Some(e) = sink_err {
        return Err(e);
    }
    Ok(result?)
}

fn cmd_train_meta(a: &TrainMetaArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(&a.common)?;
    if let Some(steps) = a.steps {
        cfg.meta.max_outer_steps = steps;
    }
    let ws = open_workspace(cfg)?;
    let spec = ws.cfg.model_spec(ws.vocab.len());
    let theta0 = spec.init_params(ws.cfg.seed);
    let driver = build_driver(
        &spec,
        ws.cfg.batch_size,
        ws.cfg.kl_warmup_for(ws.cfg.meta.max_outer_steps),
    )?;

    let trace_path = ws.cfg.output_dir.join("trace.csv");
    let mut trace = std::io::BufWriter::new(
        fs::File::create(&trace_path).map_err(io_at(&trace_path))?,
    );
    writeln!(trace, "step,task_id,loss").map_err(io_at(&trace_path))?;

    let every = a.checkpoint_every.unwrap_or(0);
    let sink = |rec: &StepRecord, ps: &ParamSet| -> Result<(), CliError> {
        for (task_id, loss) in &rec.task_losses {
            writeln!(trace, "{},{},{}", rec.round, task_id, loss).map_err(io_at(&trace_path))?;
        }
        if every > 0 && (rec.round + 1) % every == 0 {
            let ck = ws.checkpoint(CheckpointKind::Meta, spec.clone(), ps);
            ws.save(&format!("meta-step-{:06}.ckpt.json", rec.round + 1), &ck)?;
        }
        Ok(())
    };
    let (theta, records) = run_meta_loop(&driver, &theta0, &ws.tasks, &ws.cfg.meta, sink)?;
    trace.flush().map_err(io_at(&trace_path))?;

    let ck = ws.checkpoint(CheckpointKind::Meta, spec, &theta);
    let path = ws.save("meta.ckpt.json", &ck)?;
    match (records.first(), records.last()) {
        (Some(first), Some(last)) => println!(
            "{} outer steps, summed query loss {:.4} -> {:.4}",
            records.len(),
            first.total_query_loss,
            last.total_query_loss
        ),
        _ => println!("0 outer steps, checkpoint equals initialization"),
    }
    println!("wrote {}", path.display());
    println!("wrote {}", trace_path.display());
    Ok(())
}

fn cmd_pretrain(a: &ConfigArgs) -> Result<(), CliError> {
    let ws = open_workspace(resolve_config(a)?)?;
    let spec = ws.cfg.model_spec(ws.vocab.len());
    let theta0 = spec.init_params(ws.cfg.seed);
    let driver = build_driver(
        &spec,
        ws.cfg.batch_size,
        ws.cfg.kl_warmup_for(ws.cfg.pretrain.steps),
    )?;
    let (steps, lr) = (ws.cfg.pretrain.steps, ws.cfg.pretrain.lr);
    let (theta, losses) = match &driver {
        Driver::CrossAlign(m) => {
            pretrain_base(m, &theta0, &ws.tasks, steps, lr, ws.cfg.batch_size, ws.cfg.seed)?
        }
        Driver::Vae(m) => {
            pretrain_base(m, &theta0, &ws.tasks, steps, lr, ws.cfg.batch_size, ws.cfg.seed)?
        }
    };
    write_loss_csv(&ws.cfg.output_dir.join("pretrain.csv"), "<pretrain>", &losses)?;
    let ck = ws.checkpoint(CheckpointKind::Pretrained, spec, &theta);
    let path = ws.save("pretrained.ckpt.json", &ck)?;
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        println!("{steps} steps, reconstruction loss {first:.4} -> {last:.4}");
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn write_loss_csv(path: &Path, task_id: &str, losses: &[f64]) -> Result<(), CliError> {
    let mut out = String::from("step,task_id,loss\n");
    for (step, loss) in losses.iter().enumerate() {
        out.push_str(&format!("{step},{task_id},{loss}\n"));
    }
    fs::write(path, out).map_err(io_at(path))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_finetune(a: &FinetuneArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(&a.common)?;
    if let Some(steps) = a.steps {
        cfg.finetune.steps = steps;
    }
    if let Some(lr) = a.lr {
        cfg.finetune.lr = lr;
    }
    let ws = open_workspace(cfg)?;
    let task = ws.find_task(&a.task)?;
    let ckpt = load_checkpoint(&a.from)?;
    if ckpt.config_hash != ws.hash {
        eprintln!(
            "note: checkpoint was produced under config {} (this run: {})",
            ckpt.config_hash, ws.hash
        );
    }
    let theta = ckpt.restore(&ckpt.model.init_params(0))?;
    // Warmup is a from-scratch device; a checkpoint is already past it.
    let driver = build_driver(&ckpt.model, ws.cfg.batch_size, 0)?;
    let (steps, lr) = (ws.cfg.finetune.steps, ws.cfg.finetune.lr);
    let (tuned, losses) = match &driver {
        Driver::CrossAlign(m) => finetune(m, &theta, task, steps, lr, ws.cfg.seed)?,
        Driver::Vae(m) => finetune(m, &theta, task, steps, lr, ws.cfg.seed)?,
    };
    write_loss_csv(
        &ws.cfg.output_dir.join(format!("finetune-{}.csv", a.task)),
        &a.task,
        &losses,
    )?;
    let ck = ws.checkpoint(
        CheckpointKind::Finetuned(a.task.clone()),
        ckpt.model.clone(),
        &tuned,
    );
    let path = ws.save(&format!("finetuned-{}.ckpt.json", a.task), &ck)?;
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        println!("{steps} steps on {}, loss {first:.4} -> {last:.4}", a.task);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_transfer(a: &TransferArgs) -> Result<(), CliError> {
    let ws = open_workspace(resolve_config(&a.common)?)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let task_id = match (&a.task, &ckpt.kind) {
        (Some(id), _) => id.clone(),
        (None, CheckpointKind::Finetuned(id)) => id.clone(),
        (None, _) => {
            return Err(CliError::Config(ConfigError::Invalid {
                field: "task",
                message: "required unless the checkpoint is task-specialized".to_string(),
            }))
        }
    };
    let task = ws.find_task(&task_id)?;
    let source = task.label_of(&a.source_style)?;
    let target = task.label_of(&a.target_style)?;
    let ps = ckpt.restore(&ckpt.model.init_params(0))?;
    let model = EvalModel::from_spec(&ckpt.model)?;

    let text = fs::read_to_string(&a.input).map_err(io_at(&a.input))?;
    let lines: Vec<&str> = text.lines().collect();
    let mut seqs = Vec::new();
    let mut filled: Vec<usize> = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let mut ids = ws.vocab.tokenize(line);
        ids.truncate(ws.cfg.max_seq_len);
        if !ids.is_empty() {
            seqs.push(ids);
            filled.push(i);
        }
    }
    let decoded = transfer_corpus(&model, &ps, task, &seqs, source, target, ws.cfg.max_seq_len)?;
    let mut out_lines = vec![String::new(); lines.len()];
    for (&i, ids) in filled.iter().zip(&decoded) {
        out_lines[i] = ws.vocab.detokenize(ids);
    }
    let mut body = out_lines.join("\n");
    if !out_lines.is_empty() {
        body.push('\n');
    }
    fs::write(&a.out, body).map_err(io_at(&a.out))?;
    println!(
        "transferred {} sentences {} -> {} into {}",
        lines.len(),
        a.source_style,
        a.target_style,
        a.out.display()
    );
    Ok(())
}

fn load_classifier(path: &Path) -> Result<(TransferClassifier, String), CliError> {
    if !path.is_file() {
        return Err(CliError::MissingDependency(format!(
            "classifier checkpoint {} (run train-classifier first)",
            path.display()
        )));
    }
    let ck = load_checkpoint(path)?;
    ck.expect_kind(&CheckpointKind::Classifier)?;
    let ModelSpec::Classifier { config } = ck.model.clone() else {
        return Err(CliError::Checkpoint(CheckpointError::KindMismatch {
            expected: "classifier".to_string(),
            found: ck.kind.to_string(),
        }));
    };
    let ps = ck.restore(&TransferClassifier::init_params(&config))?;
    let clf = TransferClassifier::from_parts(config, ps)?;
    Ok((clf, ck.config_hash))
}

fn print_report(label: &str, r: &MetricReport) {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
    println!(
        "{label}: bleu_ref {} bleu_self {} ppl {} acc {} separation {} ({} sentences)",
        fmt(r.bleu_ref),
        fmt(r.bleu_self),
        fmt(r.ppl),
        fmt(r.acc),
        fmt(r.separation),
        r.n_sentences
    );
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let ws = open_workspace(resolve_config(&a.common)?)?;
    let (clf, clf_hash) = load_classifier(&a.classifier)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    if ckpt.config_hash != clf_hash && !a.force {
        return Err(CliError::HashMismatch {
            model: ckpt.config_hash,
            classifier: clf_hash,
        });
    }
    let ps = ckpt.restore(&ckpt.model.init_params(0))?;
    let model = EvalModel::from_spec(&ckpt.model)?;
    let opts = EvalOptions {
        acc_mode: AccuracyMode::Thresholded,
        max_len: ws.cfg.max_seq_len,
        config_hash: ws.hash.clone(),
    };

    let chosen: Vec<&StyleTask> = match &a.task {
        Some(id) => vec![ws.find_task(id)?],
        None => ws.tasks.iter().collect(),
    };
    let mut reports = Vec::new();
    for task in &chosen {
        let report = evaluate_task(&model, &ps, task, &ws.vocab, &clf, &opts)?;
        print_report(&task.task_id, &report);
        if a.all_tasks {
            let per_task = ws.cfg.output_dir.join(format!("report-{}.json", task.task_id));
            fs::write(&per_task, report.to_json()).map_err(io_at(&per_task))?;
        }
        reports.push(report);
    }
    let final_report = if a.all_tasks {
        let mean = MetricReport::mean(&reports).expect("at least one task was scored");
        print_report("mean", &mean);
        mean
    } else {
        reports.pop().expect("exactly one task was scored")
    };
    let out = a.out.clone().unwrap_or_else(|| {
        let name = match &a.task {
            Some(id) => format!("report-{id}.json"),
            None => "report.json".to_string(),
        };
        ws.cfg.output_dir.join(name)
    });
    fs::write(&out, final_report.to_json()).map_err(io_at(&out))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_train_classifier(a: &ConfigArgs) -> Result<(), CliError> {
    let ws = open_workspace(resolve_config(a)?)?;
    let mut seqs = Vec::new();
    let mut labels = Vec::new();
    for task in &ws.tasks {
        for label in [0u8, 1u8] {
            for s in task.side(label) {
                seqs.push(s.clone());
                labels.push(label);
            }
        }
    }
    let ccfg = ws.cfg.classifier_config(ws.vocab.len());
    let (clf, val_acc) = train_classifier(&ccfg, &seqs, &labels, ws.cfg.classifier.epochs)?;
    let ck = ws.checkpoint(
        CheckpointKind::Classifier,
        ModelSpec::Classifier { config: ccfg },
        clf.params(),
    );
    let path = ws.save("classifier.ckpt.json", &ck)?;
    println!(
        "trained on {} sentences, validation accuracy {val_acc:.3}",
        seqs.len()
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_export_embeddings(a: &ExportArgs) -> Result<(), CliError> {
    let ws = open_workspace(resolve_config(&a.common)?)?;
    let task = ws.find_task(&a.task)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let ps = ckpt.restore(&ckpt.model.init_params(0))?;
    let model = EvalModel::from_spec(&ckpt.model)?;
    let mut seqs = Vec::new();
    let mut labels = Vec::new();
    for label in [0u8, 1u8] {
        for s in task.side(label) {
            seqs.push(s.clone());
            labels.push(label);
        }
    }
    let table: EmbeddingTable = match &model {
        EvalModel::Vae(m) => vae_embeddings(m, &ps, &seqs, &labels)?,
        EvalModel::CrossAlign(m) => crossalign_embeddings(m, &ps, &seqs, &labels)?,
    };
    write_embeddings_csv(&a.out, &table)?;
    println!("wrote {} rows to {}", table.len(), a.out.display());
    Ok(())
}
