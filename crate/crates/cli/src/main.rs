mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use lewidi_core::losses::LossKind;
use lewidi_core::metrics::ModeScope;
use lewidi_core::selection::Strategy;
use lewidi_core::trainer::ClusterLossKind;

use config::{BackendKind, BaselineKind, EmbeddingSource, ProfileChoice, RunConfig, Task};

#[derive(Parser, Debug)]
#[command(name = "lewidi", version, about = "Soft-label evaluation, perspectivist prompting and LDL training")]
struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Directory for cached completions.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Also write SVG charts (evaluate, train).
    #[arg(long, global = true)]
    plot: bool,
    /// Dataset JSONL.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Split to predict or evaluate.
    #[arg(long, global = true)]
    split: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct SelectionArgs {
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    /// Number of demonstrations.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Embedding table JSONL for similarity selection.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Split supplying demonstrations.
    #[arg(long)]
    train_split: Option<String>,
}

#[derive(Args, Debug, Default)]
struct PromptArgs {
    /// Built-in prompt profile name.
    #[arg(long)]
    profile: Option<String>,
    /// Add annotator explanations to the demonstrations.
    #[arg(long)]
    explanations: bool,
}

#[derive(Args, Debug, Default)]
struct BackendArgs {
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Mock completions keyed by prompt hash.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    concurrency: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct TrainerArgs {
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    #[arg(long, value_parser = parse_cluster_loss)]
    cluster_loss: Option<ClusterLossKind>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    k_clusters: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score predictions against the split's annotations.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, value_enum)]
        task: Option<Task>,
    },
    /// Random or most-frequent predictions for the split.
    Baseline {
        #[arg(long, value_enum)]
        kind: Option<BaselineKind>,
        #[arg(long, value_parser = parse_scope)]
        scope: Option<ModeScope>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Choose demonstrations for every (item, annotator) pair of the split.
    Select {
        #[command(flatten)]
        selection: SelectionArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Render prompts from a selections file (or select first).
    Prompt {
        #[command(flatten)]
        selection: SelectionArgs,
        #[command(flatten)]
        prompt: PromptArgs,
        #[arg(long)]
        selections: Option<PathBuf>,
        /// Print the prompts instead of writing them.
        #[arg(long)]
        dry_run: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Query the backend. With --prompts, answers those prompts; otherwise
    /// runs selection, prompting, completion and aggregation in one go.
    Predict {
        #[command(flatten)]
        selection: SelectionArgs,
        #[command(flatten)]
        prompt: PromptArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Add per-item soft labels aggregated from perspectivist predictions.
    Aggregate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train the soft-label model on item features.
    Train {
        #[command(flatten)]
        trainer: TrainerArgs,
        /// Feature JSONL (`{"item_id", "features"}`).
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value = "train")]
        train_split: String,
        /// Cluster assignment from `cluster`; computed when absent.
        #[arg(long)]
        clusters: Option<PathBuf>,
        /// Also write soft-label predictions for this split.
        #[arg(long)]
        predict_split: Option<String>,
    },
    /// k-means over the split's empirical soft labels.
    Cluster {
        #[arg(long)]
        k_clusters: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: lewidi_core::Error| e.to_string())
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: lewidi_core::Error| e.to_string())
}

fn parse_cluster_loss(s: &str) -> Result<ClusterLossKind, String> {
    s.parse().map_err(|e: lewidi_core::Error| e.to_string())
}

fn parse_scope(s: &str) -> Result<ModeScope, String> {
    match s.replace('-', "_").as_str() {
        "per_annotator" => Ok(ModeScope::PerAnnotator),
        "global" => Ok(ModeScope::Global),
        other => Err(format!("unknown scope `{other}` (per-annotator, global)")),
    }
}

fn apply_selection(cfg: &mut RunConfig, args: &SelectionArgs) {
    let p = &mut cfg.pipeline;
    if let Some(v) = args.strategy {
        p.strategy = v;
    }
    if let Some(v) = args.k {
        p.selection.k = v;
    }
    if let Some(v) = args.lambda {
        p.selection.lambda = v;
    }
    if let Some(v) = &args.train_split {
        p.train_split = v.clone();
    }
    if let Some(v) = &args.embeddings {
        cfg.embeddings.source = EmbeddingSource::File;
        cfg.embeddings.path = Some(v.clone());
    }
}

fn apply_prompt(cfg: &mut RunConfig, args: &PromptArgs) {
    if let Some(v) = &args.profile {
        cfg.profile = Some(ProfileChoice::Builtin(v.clone()));
    }
    if args.explanations {
        cfg.pipeline.include_explanations = true;
    }
}

fn apply_backend(cfg: &mut RunConfig, args: &BackendArgs) {
    if let Some(v) = args.backend {
        cfg.backend.kind = v;
    }
    if let Some(v) = &args.script {
        cfg.backend.script = Some(v.clone());
    }
    if let Some(v) = &args.endpoint {
        cfg.backend.endpoint = v.clone();
    }
    if let Some(v) = &args.model {
        cfg.pipeline.model = v.clone();
    }
    if let Some(v) = args.concurrency {
        cfg.pipeline.concurrency = v;
    }
}

fn apply_trainer(cfg: &mut RunConfig, args: &TrainerArgs) {
    let t = &mut cfg.trainer;
    if let Some(v) = args.loss {
        t.loss_kind = v;
    }
    if let Some(v) = args.cluster_loss {
        t.cluster_loss_kind = v;
    }
    if let Some(v) = args.alpha {
        t.alpha = v;
    }
    if let Some(v) = args.k_clusters {
        t.k_clusters = v;
    }
    if let Some(v) = args.hidden_dim {
        t.hidden_dim = v;
    }
    if let Some(v) = args.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
}

/// Defaults, then the config file, then flags.
fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = &cli.out_dir {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = &cli.cache_dir {
        cfg.cache_dir = Some(v.clone());
    }
    if cli.plot {
        cfg.plot = true;
    }
    if let Some(v) = &cli.dataset {
        cfg.dataset = Some(v.clone());
    }
    if let Some(v) = &cli.split {
        cfg.split = v.clone();
    }
    match &cli.command {
        Command::Evaluate { task, .. } => {
            if let Some(t) = task {
                cfg.task = *t;
            }
        }
        Command::Baseline { kind, scope, .. } => {
            if let Some(v) = kind {
                cfg.baseline.kind = *v;
            }
            if let Some(v) = scope {
                cfg.baseline.scope = *v;
            }
        }
        Command::Select { selection, .. } => apply_selection(&mut cfg, selection),
        Command::Prompt { selection, prompt, .. } => {
            apply_selection(&mut cfg, selection);
            apply_prompt(&mut cfg, prompt);
        }
        Command::Predict {
            selection,
            prompt,
            backend,
            ..
        } => {
            apply_selection(&mut cfg, selection);
            apply_prompt(&mut cfg, prompt);
            apply_backend(&mut cfg, backend);
        }
        Command::Aggregate { .. } => {}
        Command::Train { trainer, .. } => apply_trainer(&mut cfg, trainer),
        Command::Cluster { k_clusters, .. } => {
            if let Some(v) = k_clusters {
                cfg.trainer.k_clusters = *v;
            }
        }
    }
    cfg.finish()
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    match cli.command {
        Command::Evaluate { predictions, .. } => commands::evaluate(&cfg, &predictions),
        Command::Baseline { output, .. } => commands::baseline(&cfg, output),
        Command::Select { output, .. } => commands::select(&cfg, output),
        Command::Prompt {
            selections,
            dry_run,
            output,
            ..
        } => commands::prompt(&cfg, selections.as_deref(), dry_run, output),
        Command::Predict { prompts, output, .. } => commands::predict(&cfg, prompts.as_deref(), output),
        Command::Aggregate { predictions, output } => commands::aggregate(&cfg, &predictions, output),
        Command::Train {
            features,
            train_split,
            clusters,
            predict_split,
            ..
        } => commands::train(&cfg, &features, &train_split, clusters.as_deref(), predict_split.as_deref()),
        Command::Cluster { output, .. } => commands::cluster(&cfg, output),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
