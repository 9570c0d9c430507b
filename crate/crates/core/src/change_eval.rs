//! Scoring a setup change across a set of tasks.
//!
//! Each task contributes the probability that a run under the modified setup
//! beats a run under the baseline setup. Per-task probabilities are clipped,
//! mapped to log-odds, averaged, and mapped back to a probability.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task_model::{Change, RunStore, TaskSet};

/// Clipping applied to per-task probabilities before taking the logit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Epsilon {
    /// `1 / (2 * pairs)` where `pairs` is the number of run pairings for the task.
    #[default]
    Auto,
    Fixed(f64),
}

impl Epsilon {
    fn for_pairs(self, pairs: usize) -> f64 {
        match self {
            Epsilon::Auto => 0.5 / pairs as f64,
            Epsilon::Fixed(e) => e,
        }
    }
}

/// Fraction of (baseline, modified) pairs where the modified quality is
/// strictly greater. Ties do not count as improvements.
pub fn improvement_probability(baseline: &[f64], modified: &[f64]) -> Result<f64> {
    if baseline.is_empty() || modified.is_empty() {
        return Err(Error::EmptyQualities);
    }
    let mut sorted = baseline.to_vec();
    sorted.sort_by(f64::total_cmp);
    let wins: usize = modified
        .iter()
        .map(|m| sorted.partition_point(|b| b < m))
        .sum();
    Ok(wins as f64 / (baseline.len() * modified.len()) as f64)
}

pub fn logit(p: f64) -> Result<f64> {
    if p > 0.0 && p < 1.0 {
        Ok((p / (1.0 - p)).ln())
    } else {
        Err(Error::Domain(p))
    }
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskImprovement {
    pub task_id: String,
    pub prob_improved: f64,
    pub clipped: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImprovementReport {
    /// One entry per task, in task-set order.
    pub per_task: Vec<TaskImprovement>,
    pub aggregate: f64,
    pub eps_used: Epsilon,
}

impl ImprovementReport {
    pub fn get(&self, task_id: &str) -> Option<&TaskImprovement> {
        self.per_task.iter().find(|t| t.task_id == task_id)
    }
}

/// Aggregates clipped probabilities through the mean of their logits.
///
/// Logits are summed in ascending order so the result does not depend on
/// task order.
pub fn aggregate_logits(clipped: &[f64]) -> Result<f64> {
    if clipped.is_empty() {
        return Err(Error::EmptyTaskSet);
    }
    let mut logits = clipped
        .iter()
        .map(|&p| logit(p))
        .collect::<Result<Vec<_>>>()?;
    logits.sort_by(f64::total_cmp);
    let mean = logits.iter().sum::<f64>() / logits.len() as f64;
    Ok(expit(mean))
}

pub fn eval_system_change(
    tasks: &TaskSet,
    change: &Change,
    store: &RunStore,
    eps: Epsilon,
) -> Result<ImprovementReport> {
    if tasks.is_empty() {
        return Err(Error::EmptyTaskSet);
    }
    if let Epsilon::Fixed(e) = eps {
        if !(e > 0.0 && e < 0.5) {
            return Err(Error::InvalidSpec(format!(
                "clipping epsilon {e} must lie in (0, 0.5)"
            )));
        }
    }
    let per_task = tasks
        .iter()
        .map(|task| {
            let base = store.query_qualities(&task.id, &change.baseline_setup)?;
            let modi = store.query_qualities(&task.id, &change.modified_setup)?;
            let p = improvement_probability(&base, &modi)?;
            let e = eps.for_pairs(base.len() * modi.len());
            Ok(TaskImprovement {
                task_id: task.id.clone(),
                prob_improved: p,
                clipped: p.clamp(e, 1.0 - e),
                eps: e,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let clipped: Vec<f64> = per_task.iter().map(|t| t.clipped).collect();
    Ok(ImprovementReport {
        aggregate: aggregate_logits(&clipped)?,
        per_task,
        eps_used: eps,
    })
}
