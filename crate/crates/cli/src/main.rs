#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use evolve_gnn::dataset::{adapt_published_dataset, write_dataset_dir};
use evolve_gnn::grid::{run_grid, summarize, DatasetSource, GridConfig, HistorySpec, Variant, WORKERS_ENV};
use evolve_gnn::metrics::average_accuracy;
use evolve_gnn::report::render_grid_report;
use evolve_gnn::synth::{generate_synthetic_stream, SynthConfig};
use evolve_gnn::temporal::{drift_series, time_diff_distribution};
use evolve_gnn::trainer::{incremental_train, static_train, RestartMode, TrainConfig};
use evolve_gnn::{build_task_sequence, Architecture, ModelSpec, TaskMode, TemporalGraph};

#[derive(Parser)]
#[command(name = "evolve-gnn", version, about = "Lifelong node classification on temporal graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time-difference distributions, history-size percentiles and class drift.
    Analyze(AnalyzeArgs),
    /// Inspect the task sequence of a dataset.
    #[command(subcommand)]
    Tasks(TasksCommand),
    /// Train one configuration and print per-task results as CSV.
    Run(RunArgs),
    /// Run an experiment grid described by a JSON config.
    Grid(GridArgs),
    /// Compare a once-trained static model with incremental training.
    Ablation(AblationArgs),
    /// Render SVG accuracy charts for a grid results directory.
    Report(ReportArgs),
    /// Convert a published dataset archive into the canonical layout.
    Adapt(AdaptArgs),
    /// Write a synthetic temporal graph in the canonical layout.
    Synth(SynthArgs),
}

#[derive(Subcommand)]
enum TasksCommand {
    /// One CSV line per task: sizes and class counts.
    Describe(DescribeArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct DataSource {
    /// Canonical dataset directory (nodes.csv, edges.csv, features.txt).
    #[arg(long, visible_alias = "dataset-dir")]
    data: Option<PathBuf>,
    /// Synthetic stream from a JSON config file, or `default`.
    #[arg(long, value_name = "FILE|default")]
    synthetic: Option<String>,
}

#[derive(Args)]
struct DataArgs {
    #[command(flatten)]
    source: DataSource,
    /// Feature dimension, when features.txt has trailing all-zero columns.
    #[arg(long)]
    feature_dim: Option<usize>,
}

impl DataArgs {
    fn source(&self) -> Result<DatasetSource> {
        if let Some(dir) = &self.source.data {
            return Ok(DatasetSource::Directory(dir.clone()));
        }
        let spec = self.source.synthetic.as_deref().unwrap_or("default");
        Ok(DatasetSource::Synthetic(read_synth_config(spec)?))
    }

    fn load(&self) -> Result<TemporalGraph> {
        let g = self.source()?.load(self.feature_dim)?;
        log::info!("loaded {} nodes, {} edges, {} classes", g.num_nodes(), g.num_edges(), g.num_classes());
        Ok(g)
    }
}

fn read_synth_config(spec: &str) -> Result<SynthConfig> {
    if spec == "default" {
        return Ok(SynthConfig::default());
    }
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {spec}"))
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Neighborhood depths.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    k: Vec<usize>,
    /// Write delta.csv, percentiles.csv and drift.csv here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DescribeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// History size: a positive integer, `full`, or a percentile such as `p50`.
    #[arg(long, default_value = "full")]
    history: HistorySpec,
    #[arg(long, default_value = "transductive")]
    mode: TaskMode,
    /// Depth of the time-difference distribution behind percentile histories.
    #[arg(long, default_value_t = 2)]
    percentile_k: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: Architecture,
    #[arg(long, default_value = "full")]
    history: HistorySpec,
    /// cold, warm or static.
    #[arg(long, default_value = "warm")]
    restart: Variant,
    #[arg(long, default_value = "transductive")]
    mode: TaskMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.005)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 400)]
    static_epochs: usize,
    /// Keep Adam moments across tasks instead of resetting them.
    #[arg(long)]
    carry_optimizer_state: bool,
    #[arg(long, default_value_t = 2)]
    percentile_k: usize,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    config: PathBuf,
    /// Also render SVG charts into the results directory.
    #[arg(long)]
    report: bool,
    /// Parallel cells (overrides the config; the environment variable wins).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "sage")]
    models: Vec<Architecture>,
    #[arg(long, default_value = "p50")]
    history: HistorySpec,
    /// Number of seeds, starting at 0.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 0.005)]
    lr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Grid results directory (the one holding manifest.json).
    dir: PathBuf,
}

#[derive(Args)]
struct AdaptArgs {
    /// Archive directory with X.npy, y.npy, t.npy and adjlist.txt.
    archive: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Reference dataset for the count check (dblp-easy, dblp-hard,
    /// pharmabio); defaults to the archive directory name.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON generator config; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_nodes: Option<usize>,
}

fn csv_out(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let g = args.data.load()?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
    }
    let path = |name: &str| args.out.as_ref().map(|d| d.join(name));
    let mut hists = Vec::new();
    for &k in &args.k {
        hists.push((k, time_diff_distribution(&g, k)?));
    }

    let mut w = csv_out(path("delta.csv").as_deref())?;
    w.write_record(["k", "delta", "count"])?;
    for (k, h) in &hists {
        for (d, c) in h.iter() {
            w.write_record([k.to_string(), d.to_string(), c.to_string()])?;
        }
    }
    w.flush()?;
    drop(w);
    if args.out.is_none() {
        println!();
    }

    let mut w = csv_out(path("percentiles.csv").as_deref())?;
    w.write_record(["k", "p25", "p50", "p75", "p100"])?;
    for (k, h) in &hists {
        if h.is_empty() {
            log::warn!("no time differences at k={k}");
            continue;
        }
        let mut row = vec![k.to_string()];
        for p in [0.25, 0.5, 0.75, 1.0] {
            row.push(h.percentile(p)?.to_string());
        }
        w.write_record(row)?;
    }
    w.flush()?;
    drop(w);
    if args.out.is_none() {
        println!();
    }

    let mut w = csv_out(path("drift.csv").as_deref())?;
    w.write_record(["t", "sigma"])?;
    for (t, sigma) in drift_series(&g)? {
        w.write_record([t.to_string(), sigma.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn describe(args: &DescribeArgs) -> Result<()> {
    let g = args.data.load()?;
    let history = args.history.resolve(&g, args.percentile_k)?;
    let seq = build_task_sequence(&g, history, args.mode)?;
    log::info!("history {history}, first task at t={}", seq.t_start);
    let mut w = csv_out(None)?;
    for row in seq.describe() {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let g = args.data.load()?;
    let history = args.history.resolve(&g, args.percentile_k)?;
    let seq = build_task_sequence(&g, history, args.mode)?;
    let spec = ModelSpec::new(args.model, g.feature_dim(), 1);
    let config = TrainConfig {
        lr: args.lr,
        steps_per_task: args.steps,
        restart: if args.restart == Variant::Cold { RestartMode::Cold } else { RestartMode::Warm },
        seed: args.seed,
        static_epochs: args.static_epochs,
        carry_optimizer_state: args.carry_optimizer_state,
    };
    let rec = if args.restart == Variant::Static {
        static_train(&g, &seq, &spec, &config)?
    } else {
        incremental_train(&seq, &spec, &config)?
    };
    let mut w = csv_out(args.out.as_deref())?;
    for task in &rec.tasks {
        w.serialize(task)?;
    }
    w.flush()?;
    eprintln!(
        "{} history={} {}: average accuracy {:.4} over {} tasks",
        args.model,
        history,
        args.restart,
        average_accuracy(&rec),
        rec.num_tasks()
    );
    Ok(())
}

fn report_failures(outcome: &evolve_gnn::grid::GridOutcome) -> bool {
    let mut ok = true;
    for cell in outcome.failed() {
        ok = false;
        if let evolve_gnn::grid::CellStatus::Failed(msg) = &cell.status {
            eprintln!("cell {} failed: {msg}", cell.cell.file_stem());
        }
    }
    ok
}

fn grid(args: &GridArgs) -> Result<bool> {
    let mut cfg = GridConfig::load(&args.config)?;
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    cfg.validate()?;
    log::info!("{} cells on {} workers ({WORKERS_ENV} overrides)", cfg.cells().len(), cfg.worker_count());
    let outcome = run_grid(&cfg)?;
    println!("{}", outcome.dir.display());
    let ok = report_failures(&outcome);
    if args.report && ok {
        for path in render_grid_report(&outcome.dir)? {
            println!("{}", path.display());
        }
    }
    Ok(ok)
}

fn ablation(args: &AblationArgs) -> Result<bool> {
    let cfg = GridConfig {
        dataset: args.data.source()?,
        feature_dim: args.data.feature_dim,
        models: args.models.clone(),
        histories: vec![args.history],
        restarts: vec![Variant::Static, Variant::Cold, Variant::Warm],
        seeds: (0..args.seeds).collect(),
        mode: TaskMode::Transductive,
        default_lr: args.lr,
        learning_rates: Vec::new(),
        steps_per_task: 200,
        static_epochs: 400,
        percentile_k: 2,
        output_dir: args.out.clone(),
        workers: None,
    };
    cfg.validate()?;
    let outcome = run_grid(&cfg)?;
    let ok = report_failures(&outcome);
    let mut w = csv_out(None)?;
    for row in summarize(&outcome.cells) {
        w.serialize(row)?;
    }
    w.flush()?;
    eprintln!("results in {}", outcome.dir.display());
    Ok(ok)
}

fn adapt(args: &AdaptArgs) -> Result<bool> {
    let (_, report) = adapt_published_dataset(&args.archive, &args.out, args.name.as_deref())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    match report.reference {
        None => eprintln!("no reference counts for this archive; counts not checked"),
        Some(name) if report.mismatches.is_empty() => eprintln!("counts match {name}"),
        Some(name) => {
            for m in &report.mismatches {
                eprintln!("{name}: {m}");
            }
            return Ok(false);
        }
    }
    Ok(true)
}

fn synth(args: &SynthArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => read_synth_config(&p.to_string_lossy())?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.n_nodes {
        cfg.n_nodes = n;
    }
    let g = generate_synthetic_stream(&cfg)?;
    write_dataset_dir(&g, &args.out)?;
    eprintln!("wrote {} nodes, {} edges to {}", g.num_nodes(), g.num_edges(), args.out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Analyze(a) => analyze(&a).map(|_| true),
        Command::Tasks(TasksCommand::Describe(a)) => describe(&a).map(|_| true),
        Command::Run(a) => {
            if !(a.lr.is_finite() && a.lr > 0.0) {
                bail!("learning rate must be positive, got {}", a.lr);
            }
            run(&a).map(|_| true)
        }
        Command::Grid(a) => grid(&a),
        Command::Ablation(a) => ablation(&a),
        Command::Report(a) => {
            for path in render_grid_report(&a.dir)? {
                println!("{}", path.display());
            }
            Ok(true)
        }
        Command::Adapt(a) => adapt(&a),
        Command::Synth(a) => synth(&a).map(|_| true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
