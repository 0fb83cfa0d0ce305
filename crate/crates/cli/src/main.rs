//! `bicrank`: denoise, train, rank and evaluate root-cause line rankers.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use bicrank_core::baseclf::ClassifierSpec;
use bicrank_core::checkpoint;
use bicrank_core::dataset::{cross_project_split, load_dataset, DatasetIndex};
use bicrank_core::denoise::ThresholdMode;
use bicrank_core::embedding::{hash_matrix, load_precomputed, EmbeddingMatrix};
use bicrank_core::metrics::{rank_commit, MetricSummary, RankingResult};
use bicrank_core::trainer::{
    build_graphs, denoise_commits, evaluate, run_cross_project, run_kfold, train, DenoiseScope, ExperimentOutput,
    TrainConfig, TrainOutput,
};
use bicrank_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "bicrank", version, about = "Rank deleted lines of bug-fixing commits by root-cause likelihood")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the dataset files and print their counts.
    Validate(DataArgs),
    /// Flag suspect root-cause labels; writes noise_report.jsonl.
    Denoise(RunArgs),
    /// Train on every commit (minus --test-projects); writes model.ckpt and loss_trace.csv.
    Train(RunArgs),
    /// Rank the deleted lines of each commit with a trained checkpoint.
    Rank(ModelArgs),
    /// Score a trained checkpoint; writes report.json and first_ranks.csv.
    Eval(ModelArgs),
    /// k-fold cross-validation at commit granularity.
    Xval(XvalArgs),
    /// Train on some projects, evaluate on the rest.
    Xproject(RunArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Line-node records, one JSON object per line.
    #[arg(long)]
    nodes: PathBuf,
    /// Edge records, one JSON object per line.
    #[arg(long)]
    edges: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierKind {
    Lr,
    Knn,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Precomputed embeddings (binary or JSONL). Hashed embeddings otherwise.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// TOML config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "BICHUNTER_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads for fold-level parallelism.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Ranks for Recall@N, comma separated.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    denoise: Option<Switch>,
    #[arg(long, value_enum)]
    denoise_scope: Option<ScopeArg>,
    #[arg(long, value_enum)]
    classifier: Option<ClassifierKind>,
    #[arg(long, value_enum)]
    threshold_mode: Option<ModeArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Projects held out for testing, comma separated.
    #[arg(long, value_delimiter = ',')]
    test_projects: Option<Vec<String>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Fold,
    Global,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModeArg {
    ClassConditional,
    Global,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args, Clone)]
struct XvalArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 10)]
    folds: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn require_file(path: &Path) -> Result<()> {
    fs::metadata(path).map(|_| ()).map_err(io_err(path))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write(path, text)
}

fn resolve_config(args: &RunArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(k) = &args.k {
        cfg.ks = k.clone();
    }
    if let Some(d) = args.denoise {
        cfg.denoise = matches!(d, Switch::On);
    }
    if let Some(s) = args.denoise_scope {
        cfg.denoise_scope = match s {
            ScopeArg::Fold => DenoiseScope::Fold,
            ScopeArg::Global => DenoiseScope::Global,
        };
    }
    if let Some(c) = args.classifier {
        let same_kind = matches!(
            (c, &cfg.classifier),
            (ClassifierKind::Lr, ClassifierSpec::LogisticRegression { .. }) | (ClassifierKind::Knn, ClassifierSpec::Knn { .. })
        );
        if !same_kind {
            cfg.classifier = match c {
                ClassifierKind::Lr => ClassifierSpec::logistic(),
                ClassifierKind::Knn => ClassifierSpec::knn(5),
            };
        }
    }
    if let Some(m) = args.threshold_mode {
        cfg.threshold_mode = match m {
            ModeArg::ClassConditional => ThresholdMode::ClassConditional,
            ModeArg::Global => ThresholdMode::Global,
        };
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(data: &DataArgs) -> Result<DatasetIndex> {
    require_file(&data.nodes)?;
    require_file(&data.edges)?;
    load_dataset(&data.nodes, &data.edges)
}

fn load_embeddings(args: &RunArgs, index: &DatasetIndex, cfg: &TrainConfig) -> Result<EmbeddingMatrix> {
    match &args.embeddings {
        Some(path) => load_precomputed(path, index),
        None => Ok(hash_matrix(index, cfg.embedding_dim, cfg.embedding_seed)),
    }
}

struct Session {
    cfg: TrainConfig,
    index: DatasetIndex,
    embeddings: EmbeddingMatrix,
    out: PathBuf,
}

fn open(args: &RunArgs) -> Result<Session> {
    for p in [&args.config, &args.embeddings].into_iter().flatten() {
        require_file(p)?;
    }
    let cfg = resolve_config(args)?;
    let index = load_data(&args.data)?;
    let embeddings = load_embeddings(args, &index, &cfg)?;
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    Ok(Session {
        cfg,
        index,
        embeddings,
        out: args.out.clone(),
    })
}

/// Commits outside the held-out projects (all commits when none are given).
fn training_commits(session: &Session, test_projects: Option<&[String]>) -> Result<Vec<String>> {
    match test_projects {
        Some(p) if !p.is_empty() => Ok(cross_project_split(&session.index, p)?.train),
        _ => Ok(session.index.commit_ids()),
    }
}

/// Commits inside the held-out projects (all commits when none are given).
fn target_commits(session: &Session, test_projects: Option<&[String]>) -> Result<Vec<String>> {
    match test_projects {
        Some(p) if !p.is_empty() => Ok(cross_project_split(&session.index, p)?.test),
        _ => Ok(session.index.commit_ids()),
    }
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    version: &'a str,
    started_unix_secs: u64,
    elapsed_ms: u128,
    seed: u64,
    config_hash: String,
}

fn write_meta(session: &Session, command: &str, started: SystemTime, clock: Instant) -> Result<()> {
    let meta = RunMeta {
        command,
        version: env!("CARGO_PKG_VERSION"),
        started_unix_secs: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        elapsed_ms: clock.elapsed().as_millis(),
        seed: session.cfg.seed,
        config_hash: session.cfg.hash(),
    };
    write_json(&session.out.join("run_meta.json"), &meta)
}

fn save_training(session: &Session, dir: &Path, out: &TrainOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    checkpoint::save(&dir.join("model.ckpt"), &out.model, session.cfg.seed, &session.cfg.hash())?;
    write(&dir.join("loss_trace.csv"), out.loss_csv())
}

fn load_model(session: &Session, path: &Path) -> Result<bicrank_core::RankModel> {
    require_file(path)?;
    let (model, header) = checkpoint::load(path)?;
    if model.input_dim() != session.embeddings.dim() {
        return Err(Error::DimMismatch {
            expected: model.input_dim(),
            actual: session.embeddings.dim(),
            context: Some("checkpoint input vs embeddings".into()),
        });
    }
    if header.config_hash != session.cfg.hash() {
        log::warn!("checkpoint was trained with a different configuration");
    }
    Ok(model)
}

#[derive(Serialize)]
struct FoldSummary<'a> {
    fold: usize,
    train_commits: usize,
    test_commits: &'a [String],
    removed_labels: usize,
    #[serde(flatten)]
    summary: &'a MetricSummary,
}

#[derive(Serialize)]
struct ExperimentReport<'a> {
    mean: &'a MetricSummary,
    folds: Vec<FoldSummary<'a>>,
}

fn write_experiment(session: &Session, out: &ExperimentOutput) -> Result<()> {
    let multi = out.folds.len() > 1;
    let mut folds = Vec::new();
    for (i, f) in out.folds.iter().enumerate() {
        let dir = if multi {
            session.out.join(format!("fold_{:02}", i + 1))
        } else {
            session.out.clone()
        };
        save_training(session, &dir, &f.train)?;
        let name = if multi { "report.json" } else { "fold_report.json" };
        write_json(&dir.join(name), &f.report)?;
        write(&dir.join("first_ranks.csv"), f.report.first_rank_csv())?;
        folds.push(FoldSummary {
            fold: i + 1,
            train_commits: f.split.train.len(),
            test_commits: &f.split.test,
            removed_labels: f.train.removed.len(),
            summary: &f.report.summary,
        });
    }
    write_json(&session.out.join("report.json"), &ExperimentReport { mean: &out.mean, folds })
}

fn run(command: Command) -> Result<()> {
    let started = SystemTime::now();
    let clock = Instant::now();
    match command {
        Command::Validate(data) => {
            let index = load_data(&data)?;
            let s = index.summary();
            println!("nodes {}", s.nodes);
            println!("edges {}", s.edges);
            println!("commits {}", s.commits);
            println!("projects {}", s.projects);
            println!("deleted_nodes {}", s.deleted_nodes);
            println!("root_cause_nodes {}", s.root_cause_nodes);
            println!("excluded_commits {}", s.excluded_commits.len());
            for (project, commits) in index.projects() {
                println!("project {project} commits {}", commits.len());
            }
            Ok(())
        }
        Command::Denoise(args) => {
            let session = open(&args)?;
            let commits = training_commits(&session, args.test_projects.as_deref())?;
            let noise = denoise_commits(&session.index, &commits, &session.embeddings, &session.cfg)?;
            noise.write_jsonl(&session.out.join("noise_report.jsonl"))?;
            println!("samples {} removed {}", noise.node_ids.len(), noise.removed_ids().len());
            write_meta(&session, "denoise", started, clock)
        }
        Command::Train(args) => {
            let session = open(&args)?;
            let commits = training_commits(&session, args.test_projects.as_deref())?;
            if session.cfg.denoise {
                let noise = denoise_commits(&session.index, &commits, &session.embeddings, &session.cfg)?;
                noise.write_jsonl(&session.out.join("noise_report.jsonl"))?;
            }
            let out = train(&session.index, &commits, &session.embeddings, &session.cfg)?;
            save_training(&session, &session.out, &out)?;
            println!(
                "trained on {} commits; final loss {:.6}",
                out.pair_commits.len(),
                out.loss_trace.last().copied().unwrap_or(f64::NAN)
            );
            write_meta(&session, "train", started, clock)
        }
        Command::Rank(args) => {
            let session = open(&args.run)?;
            let model = load_model(&session, &args.checkpoint)?;
            let commits = target_commits(&session, args.run.test_projects.as_deref())?;
            let graphs = build_graphs(&session.index, &commits, &session.embeddings, session.cfg.edge_weight)?;
            let rankings: Vec<RankingResult> = graphs.iter().map(|g| rank_commit(&model, g)).collect::<Result<_>>()?;
            write_json(&session.out.join("rankings.json"), &rankings)?;
            write_meta(&session, "rank", started, clock)
        }
        Command::Eval(args) => {
            let session = open(&args.run)?;
            let model = load_model(&session, &args.checkpoint)?;
            let commits = target_commits(&session, args.run.test_projects.as_deref())?;
            let report = evaluate(&session.index, &commits, &session.embeddings, &model, &session.cfg)?;
            write_json(&session.out.join("report.json"), &report)?;
            write(&session.out.join("first_ranks.csv"), report.first_rank_csv())?;
            print_summary(&report.summary);
            write_meta(&session, "eval", started, clock)
        }
        Command::Xval(args) => {
            let session = open(&args.run)?;
            let out = run_kfold(&session.index, &session.embeddings, &session.cfg, args.folds, args.run.jobs)?;
            write_experiment(&session, &out)?;
            print_summary(&out.mean);
            write_meta(&session, "xval", started, clock)
        }
        Command::Xproject(args) => {
            let projects = args
                .test_projects
                .clone()
                .ok_or_else(|| Error::Config("xproject needs --test-projects".into()))?;
            let session = open(&args)?;
            let out = run_cross_project(&session.index, &session.embeddings, &session.cfg, &projects)?;
            write_experiment(&session, &out)?;
            print_summary(&out.mean);
            write_meta(&session, "xproject", started, clock)
        }
    }
}

fn print_summary(s: &MetricSummary) {
    for (k, v) in &s.recall {
        println!("{k} {v:.4}");
    }
    match s.mfr {
        Some(m) => println!("mfr {m:.4}"),
        None => println!("mfr n/a"),
    }
    println!("commits_evaluated {} skipped {}", s.commits_evaluated, s.commits_skipped);
}
