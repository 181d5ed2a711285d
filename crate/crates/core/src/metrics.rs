//! Success/progress aggregation, the held-out weighted score and Best-of-N.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Held-out tasks and their weights (episode counts).
pub const HELD_OUT_WEIGHTS: [(&str, f64); 4] = [
    ("BabyAI", 112.0),
    ("SciWorld", 90.0),
    ("PDDL", 60.0),
    ("Jericho", 20.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: String,
    pub success: Vec<u8>,
    pub progress: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("task result `{0}` has mismatched or empty episode lists")]
    InvalidResult(String),
    #[error("missing score for held-out task `{0}`")]
    MissingTask(String),
    #[error("no runs to aggregate")]
    NoRuns,
}

impl TaskResult {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let ok = !self.success.is_empty()
            && self.success.len() == self.progress.len()
            && self.success.iter().all(|s| *s <= 1)
            && self.progress.iter().all(|p| (0.0..=1.0).contains(p));
        if ok {
            Ok(())
        } else {
            Err(MetricsError::InvalidResult(self.task.clone()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub success_rate: f64,
    pub progress_rate: f64,
}

/// Mean success and progress over episodes, in percent.
pub fn aggregate(result: &TaskResult) -> Result<Aggregate, MetricsError> {
    result.validate()?;
    let n = result.success.len() as f64;
    let s: f64 = result.success.iter().map(|&s| f64::from(s)).sum();
    let p: f64 = result.progress.iter().sum();
    Ok(Aggregate {
        success_rate: 100.0 * s / n,
        progress_rate: 100.0 * p / n,
    })
}

pub fn held_out_score(scores: &BTreeMap<String, f64>) -> Result<f64, MetricsError> {
    let mut total = 0.0;
    let mut weight = 0.0;
    for (task, w) in HELD_OUT_WEIGHTS {
        let s = scores
            .get(task)
            .ok_or_else(|| MetricsError::MissingTask(task.to_owned()))?;
        total += s * w;
        weight += w;
    }
    Ok(total / weight)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub success: bool,
    pub progress: f64,
}

/// Best progress over runs; success if any run succeeded.
pub fn best_of_n(runs: &[Run]) -> Result<Run, MetricsError> {
    let first = runs.first().ok_or(MetricsError::NoRuns)?;
    Ok(runs.iter().skip(1).fold(*first, |acc, r| Run {
        success: acc.success || r.success,
        progress: acc.progress.max(r.progress),
    }))
}

/// One line of an episode JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub task: String,
    pub success: u8,
    pub progress: f64,
}

/// Groups episodes by task, preserving episode order within a task.
pub fn group_episodes(episodes: &[Episode]) -> Vec<TaskResult> {
    let mut by_task: BTreeMap<&str, TaskResult> = BTreeMap::new();
    for e in episodes {
        let entry = by_task.entry(&e.task).or_insert_with(|| TaskResult {
            task: e.task.clone(),
            success: Vec::new(),
            progress: Vec::new(),
        });
        entry.success.push(e.success);
        entry.progress.push(e.progress);
    }
    by_task.into_values().collect()
}

/// Rounds for presentation only.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}
