//! Per-run records and the aggregate measures computed from them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Timestamp;
use crate::models::Architecture;
use crate::tasks::{HistorySize, TaskMode};
use crate::trainer::RestartMode;

/// Outcome of one task of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub t: Timestamp,
    pub accuracy: f64,
    pub n_test: usize,
    pub n_correct: usize,
    pub n_train: usize,
    pub output_width: usize,
    /// Loss after the last update step, if any step ran.
    pub final_loss: Option<f64>,
    pub train_seconds: f64,
    /// Training was skipped (no training nodes).
    pub skipped: bool,
}

/// Everything measured in one (model, history, restart, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub model: Architecture,
    pub history: HistorySize,
    pub mode: TaskMode,
    pub restart: RestartMode,
    /// Trained once before the first task instead of per task.
    pub static_baseline: bool,
    pub seed: u64,
    pub lr: f64,
    pub steps: usize,
    pub tasks: Vec<TaskResult>,
    pub warnings: Vec<String>,
}

impl ExperimentRecord {
    pub fn accuracies(&self) -> Vec<f64> {
        self.tasks.iter().map(|t| t.accuracy).collect()
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }
}

/// Unweighted mean of per-task accuracies.
pub fn average_accuracy(rec: &ExperimentRecord) -> f64 {
    mean(&rec.accuracies())
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean accuracy gain of warm over cold restarts on tasks 2..T.
pub fn forward_transfer(warm: &ExperimentRecord, cold: &ExperimentRecord) -> Result<f64> {
    forward_transfer_from(&warm.accuracies(), &cold.accuracies())
}

pub fn forward_transfer_from(warm: &[f64], cold: &[f64]) -> Result<f64> {
    if warm.len() != cold.len() {
        return Err(Error::InvalidArgument(format!(
            "task counts differ: {} vs {}",
            warm.len(),
            cold.len()
        )));
    }
    if warm.len() < 2 {
        return Err(Error::InvalidArgument(
            "forward transfer needs at least two tasks".into(),
        ));
    }
    let diffs: Vec<f64> = warm[1..].iter().zip(&cold[1..]).map(|(w, c)| w - c).collect();
    Ok(mean(&diffs))
}

/// Forward transfer averaged over seeds, pairing warm and cold runs that
/// share a seed. Seeds present on only one side are ignored.
pub fn paired_forward_transfer(warm: &[ExperimentRecord], cold: &[ExperimentRecord]) -> Result<f64> {
    let cold_by_seed: BTreeMap<u64, &ExperimentRecord> = cold.iter().map(|r| (r.seed, r)).collect();
    let values = warm
        .iter()
        .filter_map(|w| cold_by_seed.get(&w.seed).map(|c| forward_transfer(w, c)))
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::InvalidArgument("no seed shared by warm and cold runs".into()));
    }
    Ok(mean(&values))
}

/// Average accuracy of a limited-history run as a percentage of the
/// full-history run.
pub fn relative_accuracy(limited: &ExperimentRecord, full: &ExperimentRecord) -> Result<f64> {
    relative_accuracy_from(average_accuracy(limited), average_accuracy(full))
}

pub fn relative_accuracy_from(limited: f64, full: f64) -> Result<f64> {
    if full == 0.0 {
        return Err(Error::InvalidArgument("full-history accuracy is zero".into()));
    }
    Ok(limited / full * 100.0)
}

/// Mean and 95% half-width (1.96 standard errors, sample standard deviation).
pub fn confidence_interval(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "confidence interval needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    // Deviations are taken from the first value so that constant input
    // gives exactly zero spread.
    let shift = values[0];
    let d_sum: f64 = values.iter().map(|v| v - shift).sum();
    let d_sq: f64 = values.iter().map(|v| (v - shift).powi(2)).sum();
    let var = ((d_sq - d_sum * d_sum / n) / (n - 1.0)).max(0.0);
    Ok((mean(values), 1.96 * var.sqrt() / n.sqrt()))
}
