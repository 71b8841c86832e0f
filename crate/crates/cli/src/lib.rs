//! Command-line front end for `holdgraph`: one subcommand per pipeline
//! stage plus `pipeline`, which runs them in order and skips every stage
//! whose manifest is still fresh.

pub mod config;
pub mod error;
mod grid;
mod stages;
pub mod workspace;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use config::{InputFormat, RunConfig};
pub use error::{CliError, CliResult};
use workspace::{sha256_hex, Stage, Status, Workspace};

const DEFAULT_WORKSPACE: &str = "workspace";

#[derive(Debug, Parser)]
#[command(name = "holdgraph", version, about = "Fund-asset graph embeddings and fund similarity")]
pub struct Cli {
    /// TOML run configuration. Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Artifact directory (default: `workspace`).
    #[arg(long, global = true)]
    pub workspace: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Threads for walks, similarity and (outside deterministic mode) training.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Single-worker training so reruns are byte-identical. Pass `=false` to
    /// train with all workers.
    #[arg(long, global = true, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub deterministic: Option<bool>,
    /// Rerun stages even when their artifacts are fresh.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and clean a holdings file into the edge list.
    Ingest(IngestArgs),
    /// Generate a synthetic edge list with planted fund communities.
    Synth(SynthArgs),
    /// Build the bipartite graph and keep its giant component.
    Graph,
    /// Sample the biased random-walk corpus.
    Walks(WalkArgs),
    /// Train skip-gram embeddings on the corpus.
    Train(TrainArgs),
    /// K-means sweep scored by fund/asset V-measure, plus cluster composition.
    Eval(EvalArgs),
    /// Hyperparameter grid search, resumable after interruption.
    Grid(GridArgs),
    /// Most similar funds to one fund.
    Similar(SimilarArgs),
    /// Top-m overlap and cosine correlation between representations.
    Compare(CompareArgs),
    /// Within- versus outside-benchmark cosine similarity.
    Cohesion(CohesionArgs),
    /// Two-dimensional PCA projection of the embedding.
    Project,
    /// Run every stage in order, skipping fresh ones.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args, Default)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<InputFormat>,
    /// Minimum retained weight per fund, in percent.
    #[arg(long)]
    pub coverage: Option<f64>,
    /// Validate ISIN check digits.
    #[arg(long)]
    pub checksum: bool,
}

#[derive(Debug, Args, Default)]
pub struct SynthArgs {
    #[arg(long)]
    pub funds: Option<usize>,
    #[arg(long)]
    pub assets: Option<usize>,
    #[arg(long)]
    pub communities: Option<usize>,
    #[arg(long)]
    pub overlap: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct WalkArgs {
    /// Walks per node.
    #[arg(short = 'r', long = "walks-per-node")]
    pub r: Option<usize>,
    /// Hops per walk.
    #[arg(short = 'l', long = "walk-length")]
    pub l: Option<usize>,
    #[arg(short = 'p', long)]
    pub p: Option<f64>,
    #[arg(short = 'q', long)]
    pub q: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    #[arg(short = 'd', long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr_initial: Option<f64>,
    #[arg(long)]
    pub lr_final: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct EvalArgs {
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct GridArgs {
    /// Evaluate grid points concurrently.
    #[arg(long)]
    pub parallel_rows: bool,
    /// Stop after computing this many new rows; a later run resumes.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Representation {
    #[default]
    Embedded,
    Original,
    Both,
}

#[derive(Debug, Args)]
pub struct SimilarArgs {
    pub fund: String,
    #[arg(short = 'm', long, default_value_t = 5)]
    pub m: usize,
    #[arg(long, value_enum, default_value_t = Representation::Embedded)]
    pub rep: Representation,
}

#[derive(Debug, Args, Default)]
pub struct CompareArgs {
    /// Comma-separated list sizes.
    #[arg(short = 'm', long, value_delimiter = ',')]
    pub m: Vec<usize>,
}

#[derive(Debug, Args, Default)]
pub struct CohesionArgs {
    /// `benchmark_name,fund_id` membership CSV.
    #[arg(long)]
    pub benchmarks: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct PipelineArgs {
    /// Print each stage's freshness without running anything.
    #[arg(long)]
    pub dry_run: bool,
}

/// Stages run by `pipeline`, in order.
pub const PIPELINE: [Stage; 8] = [
    Stage::Edges,
    Stage::Graph,
    Stage::Walks,
    Stage::Train,
    Stage::Eval,
    Stage::Compare,
    Stage::Cohesion,
    Stage::Project,
];

/// Configuration and workspace shared by every stage of one invocation.
pub(crate) struct Ctx {
    pub cfg: RunConfig,
    pub ws: Workspace,
    pub force: bool,
    pub command: String,
}

impl Ctx {
    pub fn config_hash(&self, stage: Stage) -> String {
        stage_config_hash(&self.cfg, stage)
    }

    pub fn status(&self, stage: Stage) -> CliResult<Status> {
        self.ws.status(stage, &|s| self.config_hash(s))
    }
}

/// Digest of the configuration values a stage's output depends on.
pub fn stage_config_hash(cfg: &RunConfig, stage: Stage) -> String {
    let seed = cfg.run.seed;
    let walk = json!({
        "walks_per_node": cfg.walk.walks_per_node,
        "walk_length": cfg.walk.walk_length,
        "p": cfg.walk.p,
        "q": cfg.walk.q,
    });
    let value = match stage {
        Stage::Edges => match &cfg.paths.input {
            Some(_) => json!({"source": "ingest", "format": cfg.paths.format, "cleaning": cfg.cleaning}),
            None => json!({"source": "synth", "synth": cfg.synth, "seed": seed}),
        },
        Stage::Graph | Stage::Project => json!({}),
        Stage::Walks => json!({"walk": walk, "seed": seed}),
        Stage::Train => json!({"train": cfg.train, "seed": seed, "workers": cfg.train_workers()}),
        Stage::Eval => json!({"eval": cfg.eval, "seed": seed}),
        Stage::Compare => json!({"m_values": cfg.similarity.m_values}),
        Stage::Cohesion => json!({"benchmarks": cfg.paths.benchmarks}),
        Stage::Grid => json!({
            "dims": cfg.grid.dims,
            "lengths": cfg.grid.lengths,
            "pq": cfg.grid.pq,
            "train": cfg.train,
            "eval": cfg.eval,
            "seed": seed,
            "workers": cfg.train_workers(),
        }),
    };
    let mut h = sha256_hex(value.to_string().as_bytes());
    h.insert_str(0, &format!("{}:", stage.name()));
    h
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) {
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.run.workers = w;
    }
    if let Some(d) = cli.deterministic {
        cfg.run.deterministic = d;
    }
    if let Some(w) = &cli.workspace {
        cfg.paths.workspace = Some(w.clone());
    }
    fn set<T: Copy>(slot: &mut T, v: Option<T>) {
        if let Some(v) = v {
            *slot = v;
        }
    }
    match &cli.command {
        Command::Ingest(a) => {
            if let Some(i) = &a.input {
                cfg.paths.input = Some(i.clone());
            }
            set(&mut cfg.paths.format, a.format);
            set(&mut cfg.cleaning.coverage_threshold, a.coverage);
            cfg.cleaning.checksum |= a.checksum;
        }
        Command::Synth(a) => {
            cfg.paths.input = None;
            set(&mut cfg.synth.funds, a.funds);
            set(&mut cfg.synth.assets, a.assets);
            set(&mut cfg.synth.communities, a.communities);
            set(&mut cfg.synth.overlap, a.overlap);
        }
        Command::Walks(a) => {
            set(&mut cfg.walk.walks_per_node, a.r);
            set(&mut cfg.walk.walk_length, a.l);
            set(&mut cfg.walk.p, a.p);
            set(&mut cfg.walk.q, a.q);
        }
        Command::Train(a) => {
            set(&mut cfg.train.dim, a.dim);
            set(&mut cfg.train.window, a.window);
            set(&mut cfg.train.negatives, a.negatives);
            set(&mut cfg.train.epochs, a.epochs);
            set(&mut cfg.train.lr_initial, a.lr_initial);
            set(&mut cfg.train.lr_final, a.lr_final);
        }
        Command::Eval(a) => {
            set(&mut cfg.eval.k_min, a.k_min);
            set(&mut cfg.eval.k_max, a.k_max);
            set(&mut cfg.eval.beta, a.beta);
        }
        Command::Grid(a) => cfg.grid.parallel_rows |= a.parallel_rows,
        Command::Compare(a) if !a.m.is_empty() => cfg.similarity.m_values = a.m.clone(),
        Command::Cohesion(a) => {
            if let Some(b) = &a.benchmarks {
                cfg.paths.benchmarks = Some(b.clone());
            }
        }
        _ => {}
    }
}

/// Loads the configuration named by `--config` (or defaults) and applies
/// the command-line overrides.
pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg, cli);
    cfg.validate()?;
    for (what, path) in [("input", &cfg.paths.input), ("benchmarks", &cfg.paths.benchmarks)] {
        if let Some(p) = path {
            if !p.is_file() {
                return Err(CliError::Input(format!("{what} file {} does not exist", p.display())));
            }
        }
    }
    Ok(cfg)
}

fn workspace_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths
        .workspace
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_WORKSPACE))
}

pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve_config(&cli)?;
    // A pool may already exist when the library is driven in-process.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.workers)
        .build_global();
    let dir = workspace_dir(&cfg);

    if let Command::Similar(args) = &cli.command {
        if !dir.is_dir() {
            return Err(CliError::Input(format!("workspace {} does not exist", dir.display())));
        }
        let ws = Workspace::open(&dir)?;
        return stages::similar(&ws, args);
    }

    let ws = Workspace::open(&dir)?;
    let ctx = Ctx {
        cfg,
        ws,
        force: cli.force,
        command: std::env::args().collect::<Vec<_>>().join(" "),
    };
    if let Command::Pipeline(PipelineArgs { dry_run: true }) = &cli.command {
        println!("stage\tstatus");
        for stage in PIPELINE {
            println!("{stage}\t{}", ctx.status(stage)?);
        }
        return Ok(());
    }

    let _lock = ctx.ws.lock()?;
    match &cli.command {
        Command::Ingest(_) => {
            if ctx.cfg.paths.input.is_none() {
                return Err(CliError::Input("ingest needs --input or paths.input in the config".into()));
            }
            stages::run(&ctx, Stage::Edges)
        }
        Command::Synth(_) => stages::run(&ctx, Stage::Edges),
        Command::Graph => stages::run(&ctx, Stage::Graph),
        Command::Walks(_) => stages::run(&ctx, Stage::Walks),
        Command::Train(_) => stages::run(&ctx, Stage::Train),
        Command::Eval(_) => stages::run(&ctx, Stage::Eval),
        Command::Compare(_) => stages::run(&ctx, Stage::Compare),
        Command::Cohesion(_) => stages::run(&ctx, Stage::Cohesion),
        Command::Project => stages::run(&ctx, Stage::Project),
        Command::Grid(a) => grid::run(&ctx, a.stop_after),
        Command::Pipeline(_) => PIPELINE.iter().try_for_each(|&s| stages::run(&ctx, s)),
        Command::Similar(_) => unreachable!("handled above"),
    }
}
