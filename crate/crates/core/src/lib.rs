//! Lifelong node classification on temporal graphs whose class set grows
//! over time.
//!
//! A [`graph::TemporalGraph`] is cut into a [`tasks::TaskSequence`] of
//! yearly tasks, each restricted to a history window. The
//! [`trainer`] retrains a classifier per task, either from scratch (cold
//! restart) or from the previous task's parameters (warm restart), widening
//! the output layer whenever new classes show up. [`temporal`] measures how
//! far back in time k-hop neighborhoods reach, which is used to pick history
//! sizes, and [`metrics`] aggregates per-task accuracies.

pub mod dataset;
pub mod error;
pub mod graph;
pub mod grid;
pub mod matrix;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod report;
pub mod sparse;
pub mod synth;
pub mod tasks;
pub mod temporal;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{ClassId, NodeId, TemporalGraph, Timestamp, Window};
pub use models::{Architecture, Model, ModelSpec};
pub use tasks::{build_task_sequence, HistorySize, TaskMode, TaskSequence, TaskView};

/// Engine version recorded in experiment manifests.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
