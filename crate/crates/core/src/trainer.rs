//! Incremental training over a task sequence, and the static baseline.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ClassId, TemporalGraph};
use crate::metrics::{ExperimentRecord, TaskResult};
use crate::models::{GraphContext, Model, ModelSpec};
use crate::nn::{AdamConfig, AdamState};
use crate::tasks::{prefix_window, TaskSequence, TaskView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RestartMode {
    /// Fresh initialization before every task.
    Cold,
    /// Continue from the previous task's parameters.
    Warm,
}

impl RestartMode {
    pub const ALL: [RestartMode; 2] = [RestartMode::Cold, RestartMode::Warm];

    pub fn as_str(self) -> &'static str {
        match self {
            RestartMode::Cold => "cold",
            RestartMode::Warm => "warm",
        }
    }
}

impl fmt::Display for RestartMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RestartMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cold" => Ok(RestartMode::Cold),
            "warm" => Ok(RestartMode::Warm),
            _ => Err(Error::InvalidArgument(format!("unknown restart mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Full-batch update steps per task.
    pub steps_per_task: usize,
    pub restart: RestartMode,
    pub seed: u64,
    /// Update steps for the static baseline.
    pub static_epochs: usize,
    /// Keep optimizer moments across warm-restarted tasks instead of
    /// starting each task with a fresh optimizer.
    pub carry_optimizer_state: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.005,
            steps_per_task: 200,
            restart: RestartMode::Warm,
            seed: 0,
            static_epochs: 400,
            carry_optimizer_state: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Mutable state carried from task to task.
#[derive(Debug, Clone, Default)]
pub struct RunState {
    pub model: Option<Model>,
    /// Global class id for each output column, in order of emergence.
    pub output_classes: Vec<ClassId>,
    pub known_classes: BTreeSet<ClassId>,
    pub optimizer: Option<AdamState>,
    /// Loss after every update step, one curve per processed task.
    pub loss_curves: Vec<Vec<f64>>,
}

impl RunState {
    fn column_of(&self, num_classes: usize) -> Vec<Option<usize>> {
        let mut col = vec![None; num_classes];
        for (j, &c) in self.output_classes.iter().enumerate() {
            col[c] = Some(j);
        }
        col
    }
}

/// Processes tasks one at a time.
pub struct IncrementalTrainer {
    template: ModelSpec,
    config: TrainConfig,
    rng: ChaCha8Rng,
    state: RunState,
    warnings: Vec<String>,
}

impl IncrementalTrainer {
    /// `template` supplies everything but the output width.
    pub fn new(template: ModelSpec, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(IncrementalTrainer {
            template,
            config,
            rng,
            state: RunState::default(),
            warnings: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut TrainConfig {
        &mut self.config
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut RunState {
        &mut self.state
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Train on one task, then classify its test nodes.
    pub fn run_task(&mut self, task: &TaskView) -> Result<TaskResult> {
        let started = Instant::now();
        let train_labels = task.train_labels();
        let new: Vec<ClassId> = train_labels
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .difference(&self.state.known_classes)
            .copied()
            .collect();
        let width = self.state.output_classes.len() + new.len();

        let skipped = task.train_nodes.is_empty();
        let warm = self.config.restart == RestartMode::Warm && self.state.model.is_some();
        // Without training nodes the previous model is evaluated as is.
        let keep = warm || (skipped && self.state.model.is_some());
        if warm && !new.is_empty() {
            let model = self.state.model.as_mut().expect("checked above");
            model.expand_output_layer(new.len(), &mut self.rng)?;
        } else if !keep && width > 0 {
            let spec = self.template.with_classes(width);
            self.state.model = Some(Model::init(spec, &mut self.rng)?);
        }
        self.state.output_classes.extend(&new);

        let train_ctx = GraphContext::new(&task.train_graph.graph);
        let mut curve = Vec::new();
        if skipped {
            let msg = format!("task t={}: no training nodes, training skipped", task.t);
            log::warn!("{msg}");
            self.warnings.push(msg);
        } else {
            let col = self.state.column_of(task.train_graph.graph.num_classes());
            let model = self.state.model.as_mut().expect("width > 0 when training nodes exist");
            let targets: Vec<usize> = train_labels
                .iter()
                .map(|&c| col[c].expect("training classes are in the output layer"))
                .collect();
            let adam_cfg = AdamConfig::with_lr(self.config.lr);
            let mut adam = match self.state.optimizer.take() {
                Some(mut st) if warm && self.config.carry_optimizer_state => {
                    st.config = adam_cfg;
                    st.resize_to(model.params());
                    st
                }
                _ => AdamState::new(adam_cfg, model.params()),
            };
            for _ in 0..self.config.steps_per_task {
                let (loss, grads) =
                    model.loss_and_gradients(&train_ctx, &task.train_nodes, &targets, Some(&mut self.rng))?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("training loss at task t={}", task.t)));
                }
                curve.push(loss);
                adam.step(model.params_mut(), &grads)?;
            }
            self.state.optimizer = Some(adam);
        }
        let train_seconds = started.elapsed().as_secs_f64();

        let n_correct = match self.state.model.as_mut() {
            Some(model) => {
                let eval_ctx;
                let ctx = if Arc::ptr_eq(&task.train_graph, &task.eval_graph) {
                    &train_ctx
                } else {
                    eval_ctx = GraphContext::new(&task.eval_graph.graph);
                    &eval_ctx
                };
                let pred = model.predict(ctx, &task.test_nodes)?;
                count_correct(&pred, &self.state.output_classes, &task.test_labels())
            }
            None => 0,
        };
        self.state.known_classes.extend(&new);
        let final_loss = curve.last().copied();
        self.state.loss_curves.push(curve);

        Ok(task_result(task, n_correct, width, final_loss, train_seconds, skipped))
    }
}

fn count_correct(pred_columns: &[usize], output_classes: &[ClassId], truth: &[ClassId]) -> usize {
    pred_columns
        .iter()
        .zip(truth)
        .filter(|(&p, &y)| output_classes[p] == y)
        .count()
}

fn task_result(
    task: &TaskView,
    n_correct: usize,
    output_width: usize,
    final_loss: Option<f64>,
    train_seconds: f64,
    skipped: bool,
) -> TaskResult {
    let n_test = task.test_nodes.len();
    TaskResult {
        t: task.t,
        accuracy: if n_test == 0 { 0.0 } else { n_correct as f64 / n_test as f64 },
        n_test,
        n_correct,
        n_train: task.train_nodes.len(),
        output_width,
        final_loss,
        train_seconds,
        skipped,
    }
}

fn empty_record(seq: &TaskSequence, template: &ModelSpec, config: &TrainConfig, steps: usize) -> ExperimentRecord {
    ExperimentRecord {
        model: template.arch,
        history: seq.history,
        mode: seq.mode,
        restart: config.restart,
        static_baseline: false,
        seed: config.seed,
        lr: config.lr,
        steps,
        tasks: Vec::with_capacity(seq.len()),
        warnings: Vec::new(),
    }
}

/// Run every task of the sequence in order.
pub fn incremental_train(seq: &TaskSequence, template: &ModelSpec, config: &TrainConfig) -> Result<ExperimentRecord> {
    let mut trainer = IncrementalTrainer::new(*template, config.clone())?;
    let mut record = empty_record(seq, template, config, config.steps_per_task);
    for task in &seq.tasks {
        record.tasks.push(trainer.run_task(task)?);
    }
    record.warnings = trainer.warnings;
    Ok(record)
}

/// Train once on every node before the first task, then evaluate each task
/// without further updates.
pub fn static_train(
    g: &TemporalGraph,
    seq: &TaskSequence,
    template: &ModelSpec,
    config: &TrainConfig,
) -> Result<ExperimentRecord> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let prefix = prefix_window(g, seq.t_start);
    if prefix.is_empty() {
        return Err(Error::EmptyMask);
    }
    let pg = &prefix.graph;
    let output_classes: Vec<ClassId> = pg.labels().iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut col = vec![None; g.num_classes()];
    for (j, &c) in output_classes.iter().enumerate() {
        col[c] = Some(j);
    }
    let rows: Vec<usize> = (0..pg.num_nodes()).collect();
    let targets: Vec<usize> = pg.labels().iter().map(|&c| col[c].expect("prefix class")).collect();

    let started = Instant::now();
    let spec = (*template).with_classes(output_classes.len());
    let mut model = Model::init(spec, &mut rng)?;
    let ctx = GraphContext::new(pg);
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), model.params());
    let mut final_loss = None;
    for _ in 0..config.static_epochs {
        let (loss, grads) = model.loss_and_gradients(&ctx, &rows, &targets, Some(&mut rng))?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("static training loss".into()));
        }
        final_loss = Some(loss);
        adam.step(model.params_mut(), &grads)?;
    }
    let train_seconds = started.elapsed().as_secs_f64();

    let mut record = empty_record(seq, template, config, config.static_epochs);
    record.static_baseline = true;
    for task in &seq.tasks {
        let ctx = GraphContext::new(&task.eval_graph.graph);
        let pred = model.predict(&ctx, &task.test_nodes)?;
        let n_correct = count_correct(&pred, &output_classes, &task.test_labels());
        let secs = if record.tasks.is_empty() { train_seconds } else { 0.0 };
        record
            .tasks
            .push(task_result(task, n_correct, output_classes.len(), final_loss, secs, false));
    }
    Ok(record)
}
