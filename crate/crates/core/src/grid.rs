//! Experiment grids: configuration, parallel execution and persistence.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{load_dataset_dir, EDGES_FILE, FEATURES_FILE, NODES_FILE};
use crate::error::{Error, Result};
use crate::graph::TemporalGraph;
use crate::metrics::{average_accuracy, confidence_interval, paired_forward_transfer, ExperimentRecord};
use crate::models::{Architecture, ModelSpec};
use crate::synth::{generate_synthetic_stream, SynthConfig};
use crate::tasks::{build_task_sequence, HistorySize, TaskMode, TaskSequence};
use crate::temporal::time_diff_distribution;
use crate::trainer::{incremental_train, static_train, RestartMode, TrainConfig};
use crate::ENGINE_VERSION;

pub const WORKERS_ENV: &str = "EVOLVE_GNN_WORKERS";
pub const DEFAULT_LR: f64 = 0.005;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "evolve-gnn-grid/1";

/// A history size given directly or as a percentile of the Δt^k
/// distribution of the dataset. Written as `3`, `"full"` or `"p50"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawHistory", into = "RawHistory")]
pub enum HistorySpec {
    Size(HistorySize),
    Percentile(u8),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawHistory {
    Int(u32),
    Str(String),
}

impl TryFrom<RawHistory> for HistorySpec {
    type Error = Error;

    fn try_from(raw: RawHistory) -> Result<Self> {
        match raw {
            RawHistory::Int(c) => HistorySpec::from_str(&c.to_string()),
            RawHistory::Str(s) => HistorySpec::from_str(&s),
        }
    }
}

impl From<HistorySpec> for RawHistory {
    fn from(h: HistorySpec) -> Self {
        match h {
            HistorySpec::Size(HistorySize::Limited(c)) => RawHistory::Int(c),
            other => RawHistory::Str(other.to_string()),
        }
    }
}

impl FromStr for HistorySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(p) = s.strip_prefix(['p', 'P']) {
            return match p.parse::<u8>() {
                Ok(p) if (1..=100).contains(&p) => Ok(HistorySpec::Percentile(p)),
                _ => Err(Error::Config(format!("percentile must lie in 1..=100, got {s:?}"))),
            };
        }
        s.parse().map(HistorySpec::Size)
    }
}

impl fmt::Display for HistorySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HistorySpec::Size(h) => write!(f, "{h}"),
            HistorySpec::Percentile(p) => write!(f, "p{p}"),
        }
    }
}

impl HistorySpec {
    /// Resolve against a graph. Percentiles use Δt^k; a percentile of 0
    /// time steps becomes a history of 1.
    pub fn resolve(self, g: &TemporalGraph, k: usize) -> Result<HistorySize> {
        match self {
            HistorySpec::Size(h) => Ok(h),
            HistorySpec::Percentile(p) => {
                let hist = time_diff_distribution(g, k)?;
                let c = hist.percentile(f64::from(p) / 100.0)?.max(1);
                Ok(HistorySize::Limited(u32::try_from(c).unwrap_or(u32::MAX)))
            }
        }
    }
}

/// Written as `{"directory": "path"}` or `{"synthetic": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    /// Canonical dataset directory.
    Directory(PathBuf),
    Synthetic(SynthConfig),
}

impl DatasetSource {
    pub fn load(&self, feature_dim: Option<usize>) -> Result<TemporalGraph> {
        match self {
            DatasetSource::Directory(dir) => load_dataset_dir(dir, feature_dim),
            DatasetSource::Synthetic(synthetic) => generate_synthetic_stream(synthetic),
        }
    }
}

/// Learning rate for the cells it matches; unset fields match anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRateRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<Architecture>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<HistorySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restart: Option<Variant>,
    pub lr: f64,
}

/// Training regime of a grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cold,
    Warm,
    /// Trained once before the first task.
    Static,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Cold => "cold",
            Variant::Warm => "warm",
            Variant::Static => "static",
        }
    }

    fn restart(self) -> RestartMode {
        match self {
            Variant::Cold => RestartMode::Cold,
            Variant::Warm | Variant::Static => RestartMode::Warm,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cold" => Ok(Variant::Cold),
            "warm" => Ok(Variant::Warm),
            "static" => Ok(Variant::Static),
            _ => Err(Error::InvalidArgument(format!("unknown variant {s:?}"))),
        }
    }
}

fn default_lr() -> f64 {
    DEFAULT_LR
}
fn default_steps() -> usize {
    200
}
fn default_static_epochs() -> usize {
    400
}
fn default_k() -> usize {
    2
}
fn default_restarts() -> Vec<Variant> {
    vec![Variant::Cold, Variant::Warm]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dataset: DatasetSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    pub models: Vec<Architecture>,
    pub histories: Vec<HistorySpec>,
    #[serde(default = "default_restarts")]
    pub restarts: Vec<Variant>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub mode: TaskMode,
    #[serde(default = "default_lr")]
    pub default_lr: f64,
    #[serde(default)]
    pub learning_rates: Vec<LearningRateRule>,
    #[serde(default = "default_steps")]
    pub steps_per_task: usize,
    #[serde(default = "default_static_epochs")]
    pub static_epochs: usize,
    /// Neighborhood depth of the Δt^k distribution behind percentile
    /// history sizes.
    #[serde(default = "default_k")]
    pub percentile_k: usize,
    pub output_dir: PathBuf,
    /// Parallel cells; `EVOLVE_GNN_WORKERS` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl GridConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: GridConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |what: &str| Err(Error::Config(format!("{what} list is empty")));
        if self.models.is_empty() {
            return empty("model");
        }
        if self.seeds.is_empty() {
            return empty("seed");
        }
        if self.histories.is_empty() {
            return empty("history");
        }
        if self.restarts.is_empty() {
            return empty("restart");
        }
        for lr in std::iter::once(self.default_lr).chain(self.learning_rates.iter().map(|r| r.lr)) {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
            }
        }
        if self.percentile_k == 0 {
            return Err(Error::Config("percentile_k must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        match &self.dataset {
            DatasetSource::Directory(dir) => {
                for f in [NODES_FILE, EDGES_FILE, FEATURES_FILE] {
                    if !dir.join(f).is_file() {
                        return Err(Error::Config(format!("dataset file {} does not exist", dir.join(f).display())));
                    }
                }
            }
            DatasetSource::Synthetic(synthetic) => synthetic.validate()?,
        }
        Ok(())
    }

    /// First matching rule, else the default.
    pub fn learning_rate(&self, model: Architecture, history: HistorySpec, variant: Variant) -> f64 {
        self.learning_rates
            .iter()
            .find(|r| {
                r.model.is_none_or(|m| m == model)
                    && r.history.is_none_or(|h| h == history)
                    && r.restart.is_none_or(|v| v == variant)
            })
            .map_or(self.default_lr, |r| r.lr)
    }

    /// Worker count: environment override, then config, then available
    /// parallelism.
    pub fn worker_count(&self) -> usize {
        std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&w| w > 0)
            .or(self.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    /// Hash of everything that affects results; output location and worker
    /// count are excluded.
    pub fn content_hash(&self) -> String {
        let mut key = self.clone();
        key.output_dir = PathBuf::new();
        key.workers = None;
        let json = serde_json::to_string(&(ENGINE_VERSION, &key)).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &model in &self.models {
            for &history in &self.histories {
                for &variant in &self.restarts {
                    for &seed in &self.seeds {
                        out.push(Cell {
                            model,
                            history,
                            variant,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub model: Architecture,
    pub history: HistorySpec,
    pub variant: Variant,
    pub seed: u64,
}

impl Cell {
    pub fn file_stem(&self) -> String {
        format!("{}_h{}_{}_s{}", self.model, self.history, self.variant, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub engine_version: String,
    pub config_hash: String,
    pub config: GridConfig,
    /// Each history spec with the size it resolved to.
    pub resolved_histories: BTreeMap<String, HistorySize>,
    pub cells: Vec<String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Completed(ExperimentRecord),
    /// Loaded from an earlier run with the same manifest hash.
    Reused(Vec<RunRow>),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub cell: Cell,
    pub lr: f64,
    pub status: CellStatus,
    pub seconds: f64,
}

impl CellOutcome {
    pub fn accuracies(&self) -> Option<Vec<f64>> {
        match &self.status {
            CellStatus::Completed(r) => Some(r.accuracies()),
            CellStatus::Reused(rows) => Some(rows.iter().map(|r| r.acc_t).collect()),
            CellStatus::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub cells: Vec<CellOutcome>,
}

impl GridOutcome {
    pub fn failed(&self) -> impl Iterator<Item = &CellOutcome> {
        self.cells.iter().filter(|c| matches!(c.status, CellStatus::Failed(_)))
    }
}

/// One line of a per-run CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub t: i64,
    pub acc_t: f64,
    pub n_test: usize,
    pub n_train: usize,
    pub output_width: usize,
}

pub fn read_run_csv(path: &Path) -> Result<Vec<RunRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<RunRow>, _>>()?;
    Ok(rows)
}

fn write_run_csv(path: &Path, rec: &ExperimentRecord) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    let mut w = csv::Writer::from_path(&tmp)?;
    for t in &rec.tasks {
        w.serialize(RunRow {
            t: t.t,
            acc_t: t.accuracy,
            n_test: t.n_test,
            n_train: t.n_train,
            output_width: t.output_width,
        })?;
    }
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_new(path: &Path, contents: &[u8]) -> Result<()> {
    if path.exists() {
        return Ok(());
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Run every cell of the grid, in parallel across cells. Results go to
/// `output_dir/<config hash>/`; cells already present there are reused,
/// never recomputed or overwritten. A failing cell is recorded and does not
/// stop the others.
pub fn run_grid(cfg: &GridConfig) -> Result<GridOutcome> {
    cfg.validate()?;
    let g = Arc::new(cfg.dataset.load(cfg.feature_dim)?);
    let mut resolved = BTreeMap::new();
    let mut sequences: BTreeMap<HistorySpec, Arc<TaskSequence>> = BTreeMap::new();
    for &h in &cfg.histories {
        let size = h.resolve(&g, cfg.percentile_k)?;
        resolved.insert(h.to_string(), size);
        sequences.insert(h, Arc::new(build_task_sequence(&g, size, cfg.mode)?));
    }

    let hash = cfg.content_hash();
    let dir = cfg.output_dir.join(&hash);
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    let cells = cfg.cells();
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        engine_version: ENGINE_VERSION.into(),
        config_hash: hash,
        config: cfg.clone(),
        resolved_histories: resolved,
        cells: cells.iter().map(Cell::file_stem).collect(),
    };
    write_new(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count())
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|&cell| run_cell(cfg, &g, &sequences[&cell.history], cell, &runs_dir))
            .collect()
    });

    if outcomes.iter().all(|o| !matches!(o.status, CellStatus::Failed(_))) {
        write_new(&dir.join("results.csv"), &results_csv(&outcomes)?)?;
        write_new(&dir.join("summary.csv"), &summary_csv(&outcomes)?)?;
    } else {
        // Failures are recorded, never cached, so a rerun retries them.
        fs::write(dir.join("results.partial.csv"), results_csv(&outcomes)?)
            .map_err(|e| Error::io(dir.join("results.partial.csv"), e))?;
    }
    Ok(GridOutcome {
        dir,
        manifest,
        cells: outcomes,
    })
}

fn run_cell(cfg: &GridConfig, g: &TemporalGraph, seq: &TaskSequence, cell: Cell, runs_dir: &Path) -> CellOutcome {
    let lr = cfg.learning_rate(cell.model, cell.history, cell.variant);
    let path = runs_dir.join(format!("{}.csv", cell.file_stem()));
    let started = Instant::now();
    if path.exists() {
        let status = match read_run_csv(&path) {
            Ok(rows) => CellStatus::Reused(rows),
            Err(e) => CellStatus::Failed(format!("unreadable earlier result: {e}")),
        };
        return CellOutcome {
            cell,
            lr,
            status,
            seconds: 0.0,
        };
    }
    let train = TrainConfig {
        lr,
        steps_per_task: cfg.steps_per_task,
        restart: cell.variant.restart(),
        seed: cell.seed,
        static_epochs: cfg.static_epochs,
        carry_optimizer_state: false,
    };
    let spec = ModelSpec::new(cell.model, g.feature_dim(), 1);
    let result = catch_unwind(AssertUnwindSafe(|| match cell.variant {
        Variant::Static => static_train(g, seq, &spec, &train),
        _ => incremental_train(seq, &spec, &train),
    }));
    let status = match result {
        Ok(Ok(rec)) => match write_run_csv(&path, &rec) {
            Ok(()) => CellStatus::Completed(rec),
            Err(e) => CellStatus::Failed(e.to_string()),
        },
        Ok(Err(e)) => CellStatus::Failed(e.to_string()),
        Err(panic) => CellStatus::Failed(
            panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into()),
        ),
    };
    if let CellStatus::Failed(msg) = &status {
        log::error!("cell {} failed: {msg}", cell.file_stem());
    }
    CellOutcome {
        cell,
        lr,
        status,
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn results_csv(outcomes: &[CellOutcome]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "history", "restart", "seed", "lr", "avg_acc", "status", "error"])?;
    for o in outcomes {
        let (avg, status, err) = match (&o.status, o.accuracies()) {
            (CellStatus::Failed(e), _) => (String::new(), "failed", e.clone()),
            (_, Some(accs)) => (mean(&accs).to_string(), "ok", String::new()),
            _ => unreachable!(),
        };
        w.write_record([
            o.cell.model.to_string(),
            o.cell.history.to_string(),
            o.cell.variant.to_string(),
            o.cell.seed.to_string(),
            o.lr.to_string(),
            avg,
            status.to_string(),
            err,
        ])?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Per (model, history, restart) aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: Architecture,
    pub history: String,
    pub restart: Variant,
    pub n_seeds: usize,
    pub mean_acc: f64,
    /// Empty with fewer than two seeds.
    pub ci_halfwidth: Option<f64>,
    /// Warm rows only: forward transfer against the cold row, paired by
    /// seed.
    pub fwt: Option<f64>,
}

pub fn summarize(outcomes: &[CellOutcome]) -> Vec<SummaryRow> {
    type Key = (Architecture, HistorySpec, Variant);
    let mut groups: BTreeMap<Key, Vec<ExperimentRecord>> = BTreeMap::new();
    for o in outcomes {
        if let Some(accs) = o.accuracies() {
            groups
                .entry((o.cell.model, o.cell.history, o.cell.variant))
                .or_default()
                .push(pseudo_record(o.cell, &accs));
        }
    }
    groups
        .iter()
        .map(|(&(model, history, variant), recs)| {
            let avgs: Vec<f64> = recs.iter().map(average_accuracy).collect();
            let ci = confidence_interval(&avgs).ok().map(|(_, h)| h);
            let fwt = match variant {
                Variant::Warm => groups
                    .get(&(model, history, Variant::Cold))
                    .and_then(|cold| paired_forward_transfer(recs, cold).ok()),
                _ => None,
            };
            SummaryRow {
                model,
                history: history.to_string(),
                restart: variant,
                n_seeds: recs.len(),
                mean_acc: mean(&avgs),
                ci_halfwidth: ci,
                fwt,
            }
        })
        .collect()
}

fn pseudo_record(cell: Cell, accs: &[f64]) -> ExperimentRecord {
    ExperimentRecord {
        model: cell.model,
        history: HistorySize::Full,
        mode: TaskMode::Transductive,
        restart: cell.variant.restart(),
        static_baseline: cell.variant == Variant::Static,
        seed: cell.seed,
        lr: 0.0,
        steps: 0,
        tasks: accs
            .iter()
            .map(|&a| crate::metrics::TaskResult {
                t: 0,
                accuracy: a,
                n_test: 0,
                n_correct: 0,
                n_train: 0,
                output_width: 0,
                final_loss: None,
                train_seconds: 0.0,
                skipped: false,
            })
            .collect(),
        warnings: Vec::new(),
    }
}

fn summary_csv(outcomes: &[CellOutcome]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in summarize(outcomes) {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<SummaryRow>, _>>()?;
    Ok(rows)
}
