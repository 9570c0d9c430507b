//! Choosing which development tasks to evaluate an AutoML change on.
//!
//! A change (baseline setup to modified setup) is scored on a set of tasks by
//! its improvement probability ([`change_eval`]). A filter ([`filters`])
//! picks the train tasks most relevant to a set of holdout tasks using a
//! similarity metric ([`similarity`]); how well a filter's improvement
//! probability predicts the holdouts' is measured by a log-loss and compared
//! across filters ([`filter_eval`]). [`synth`] provides a simulator to
//! exercise all of this without real AutoML runs.

pub mod change_eval;
pub mod error;
pub mod filter_eval;
pub mod filters;
pub mod similarity;
pub mod synth;
pub mod task_model;

pub use change_eval::{
    eval_system_change, expit, improvement_probability, logit, Epsilon, ImprovementReport,
};
pub use error::{Error, Result};
pub use filter_eval::{
    contrast_filters, eval_filter, log_loss, sample_partitions, ContrastSummary, EvalSettings,
    FilterLossRecord, PartitionMode, PartitionPlan,
};
pub use filters::{FilterContext, FilterKind, FilterSpec, HoldoutAccess};
pub use similarity::{CorrelationKind, SimilarityVector};
pub use task_model::{Change, RunRecord, RunStore, Task, TaskSet};
