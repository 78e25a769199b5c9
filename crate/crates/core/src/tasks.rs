//! Construction of the lifelong task sequence from a temporal graph.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ClassId, NodeId, TemporalGraph, Timestamp, Window};

/// Fraction of all nodes that must precede the first evaluated timestamp.
pub const INITIAL_FRACTION: f64 = 0.25;

/// Number of past time steps whose nodes stay available for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum HistorySize {
    Limited(u32),
    Full,
}

impl HistorySize {
    /// Lower window bound for a task at time `t`.
    pub fn window_start(self, t: Timestamp) -> Timestamp {
        match self {
            HistorySize::Limited(c) => t.saturating_sub(c as Timestamp),
            HistorySize::Full => Timestamp::MIN,
        }
    }
}

impl fmt::Display for HistorySize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HistorySize::Limited(c) => write!(f, "{c}"),
            HistorySize::Full => f.write_str("full"),
        }
    }
}

impl FromStr for HistorySize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(HistorySize::Full);
        }
        match s.trim().parse::<u32>() {
            Ok(c) if c >= 1 => Ok(HistorySize::Limited(c)),
            _ => Err(Error::InvalidArgument(format!(
                "history size must be a positive integer or 'full', got {s:?}"
            ))),
        }
    }
}

impl From<HistorySize> for String {
    fn from(h: HistorySize) -> String {
        h.to_string()
    }
}

impl TryFrom<String> for HistorySize {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    /// Train on the labeled part of the evaluation window.
    #[default]
    Transductive,
    /// Train on a window that ends one step before the test nodes appear.
    Inductive,
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskMode::Transductive => "transductive",
            TaskMode::Inductive => "inductive",
        })
    }
}

impl FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transductive" => Ok(TaskMode::Transductive),
            "inductive" => Ok(TaskMode::Inductive),
            other => Err(Error::InvalidArgument(format!("unknown task mode {other:?}"))),
        }
    }
}

/// One lifelong task.
#[derive(Debug, Clone)]
pub struct TaskView {
    pub t: Timestamp,
    /// Graph the test nodes are classified on.
    pub eval_graph: Arc<Window>,
    /// Graph used for training; the same window as `eval_graph` in
    /// transductive mode.
    pub train_graph: Arc<Window>,
    /// Local ids into `train_graph`.
    pub train_nodes: Vec<NodeId>,
    /// Local ids into `eval_graph`; exactly the nodes with time `t`.
    pub test_nodes: Vec<NodeId>,
    /// Classes seen in training labels up to and including this task.
    pub known_classes: BTreeSet<ClassId>,
    /// Classes first seen in this task's training labels.
    pub new_classes: BTreeSet<ClassId>,
}

impl TaskView {
    pub fn train_labels(&self) -> Vec<ClassId> {
        self.train_nodes
            .iter()
            .map(|&u| self.train_graph.graph.label(u))
            .collect()
    }

    pub fn test_labels(&self) -> Vec<ClassId> {
        self.test_nodes
            .iter()
            .map(|&u| self.eval_graph.graph.label(u))
            .collect()
    }

    pub fn train_classes(&self) -> BTreeSet<ClassId> {
        self.train_labels().into_iter().collect()
    }

    /// Original graph ids of the training nodes.
    pub fn train_original_ids(&self) -> Vec<NodeId> {
        self.train_nodes
            .iter()
            .map(|&u| self.train_graph.original_ids[u])
            .collect()
    }

    pub fn test_original_ids(&self) -> Vec<NodeId> {
        self.test_nodes
            .iter()
            .map(|&u| self.eval_graph.original_ids[u])
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TaskSequence {
    pub tasks: Vec<TaskView>,
    pub history: HistorySize,
    pub mode: TaskMode,
    pub t_start: Timestamp,
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, t: Timestamp) -> Option<&TaskView> {
        self.tasks.iter().find(|task| task.t == t)
    }

    /// Classes present in the training labels of task `t` but unknown before it.
    pub fn new_classes(&self, t: Timestamp) -> BTreeSet<ClassId> {
        self.task(t).map(|task| task.new_classes.clone()).unwrap_or_default()
    }

    /// Per-task summary rows.
    pub fn describe(&self) -> Vec<TaskSummary> {
        self.tasks
            .iter()
            .map(|task| TaskSummary {
                t: task.t,
                n_nodes: task.eval_graph.graph.num_nodes(),
                n_edges: task.eval_graph.graph.num_edges(),
                n_train: task.train_nodes.len(),
                n_test: task.test_nodes.len(),
                n_known_classes: task.known_classes.len(),
                n_new_classes: task.new_classes.len(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskSummary {
    pub t: Timestamp,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_known_classes: usize,
    pub n_new_classes: usize,
}

/// Earliest timestamp `t` such that nodes with time `< t` make up at least
/// a quarter of the graph.
pub fn first_task_time(g: &TemporalGraph) -> Result<Timestamp> {
    let stamps = g.timestamps();
    if stamps.len() < 2 {
        return Err(Error::NoTaskSequence(format!(
            "graph has {} distinct timestamp(s)",
            stamps.len()
        )));
    }
    let mut times = g.node_times().to_vec();
    times.sort_unstable();
    let threshold = INITIAL_FRACTION * g.num_nodes() as f64;
    for &t in &stamps {
        let before = times.partition_point(|&x| x < t);
        if before as f64 >= threshold {
            return Ok(t);
        }
    }
    unreachable!("the last timestamp is preceded by all other nodes")
}

/// All nodes with time strictly before `t`.
pub fn prefix_window(g: &TemporalGraph, t: Timestamp) -> Window {
    g.window_subgraph(Timestamp::MIN, t - 1)
}

pub fn build_task_sequence(
    g: &TemporalGraph,
    history: HistorySize,
    mode: TaskMode,
) -> Result<TaskSequence> {
    if g.num_nodes() == 0 {
        return Err(Error::NoTaskSequence("graph is empty".into()));
    }
    let t_start = first_task_time(g)?;
    let mut known: BTreeSet<ClassId> = BTreeSet::new();
    let mut tasks = Vec::new();
    for t in g.timestamps().into_iter().filter(|&t| t >= t_start) {
        let lo = history.window_start(t);
        let eval_graph = Arc::new(g.window_subgraph(lo, t));
        let test_nodes: Vec<NodeId> = (0..eval_graph.graph.num_nodes())
            .filter(|&u| eval_graph.graph.time(u) == t)
            .collect();
        let (train_graph, train_nodes) = match mode {
            TaskMode::Transductive => {
                let train = (0..eval_graph.graph.num_nodes())
                    .filter(|&u| eval_graph.graph.time(u) < t)
                    .collect();
                (Arc::clone(&eval_graph), train)
            }
            TaskMode::Inductive => {
                let w = Arc::new(g.window_subgraph(lo, t - 1));
                let train = (0..w.graph.num_nodes()).collect();
                (w, train)
            }
        };
        let mut task = TaskView {
            t,
            eval_graph,
            train_graph,
            train_nodes,
            test_nodes,
            known_classes: BTreeSet::new(),
            new_classes: BTreeSet::new(),
        };
        task.new_classes = task.train_classes().difference(&known).copied().collect();
        known.extend(task.new_classes.iter().copied());
        task.known_classes = known.clone();
        tasks.push(task);
    }
    Ok(TaskSequence {
        tasks,
        history,
        mode,
        t_start,
    })
}
