//! Scoring filters against holdout tasks and comparing two filters over many
//! train/holdout partitions.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::change_eval::{eval_system_change, Epsilon};
use crate::error::{Error, Result};
use crate::filters::{apply_filter, FilterContext, FilterSpec, HoldoutAccess};
use crate::task_model::{Change, RunStore, TaskSet};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// `t ln y + (1 - t) ln (1 - y)`; at most 0, maximised at `y = t`.
pub fn log_loss(y: f64, t: f64) -> f64 {
    t * y.ln() + (1.0 - t) * (1.0 - y).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilterLossRecord {
    pub partition_index: usize,
    pub filter: String,
    pub y: f64,
    pub t: f64,
    pub log_loss: f64,
}

/// Settings shared by every filter evaluation in a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalSettings {
    pub eps: Epsilon,
    /// Setups compared by the oracle metric.
    pub oracle_setups: Vec<String>,
    pub access: HoldoutAccess,
}

/// Log-loss of an already-filtered train set against the holdouts.
pub fn eval_filtered(
    filtered: &TaskSet,
    holdouts: &TaskSet,
    change: &Change,
    store: &RunStore,
    eps: Epsilon,
) -> Result<(f64, f64, f64)> {
    if filtered.is_empty() {
        return Err(Error::EmptyFilterOutput);
    }
    let y = eval_system_change(filtered, change, store, eps)?.aggregate;
    let t = eval_system_change(holdouts, change, store, eps)?.aggregate;
    Ok((y, t, log_loss(y, t)))
}

pub fn eval_filter(
    spec: &FilterSpec,
    train: &TaskSet,
    holdouts: &TaskSet,
    change: &Change,
    store: &RunStore,
    settings: &EvalSettings,
) -> Result<FilterLossRecord> {
    let ctx = FilterContext::new(store, &change.baseline_setup, &settings.oracle_setups)
        .with_access(settings.access);
    let filtered = apply_filter(spec, train, holdouts, &ctx)?;
    let (y, t, log_loss) = eval_filtered(&filtered, holdouts, change, store, settings.eps)?;
    Ok(FilterLossRecord {
        partition_index: 0,
        filter: spec.name(),
        y,
        t,
        log_loss,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PartitionMode {
    /// Every task is equally likely to land in the holdout set.
    RandomSplit,
    /// Train tasks are those tagged `train_tag`; holdouts are drawn from the rest.
    BySource { train_tag: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub train: Vec<String>,
    pub holdout: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PartitionPlan {
    pub partitions: Vec<Partition>,
    pub mode: PartitionMode,
    pub holdout_size: usize,
    pub seed: u64,
}

pub fn sample_partitions(
    tasks: &TaskSet,
    mode: &PartitionMode,
    holdout_size: usize,
    count: usize,
    seed: u64,
) -> Result<PartitionPlan> {
    if holdout_size == 0 {
        return Err(Error::InfeasiblePartition(
            "holdout size must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<&str> = tasks.ids();
    let partitions = match mode {
        PartitionMode::RandomSplit => {
            if holdout_size >= ids.len() {
                return Err(Error::InfeasiblePartition(format!(
                    "holdout size {holdout_size} leaves no train tasks out of {}",
                    ids.len()
                )));
            }
            (0..count)
                .map(|_| {
                    let mut idx: Vec<usize> = (0..ids.len()).collect();
                    idx.shuffle(&mut rng);
                    let (hold, train) = idx.split_at_mut(holdout_size);
                    hold.sort_unstable();
                    train.sort_unstable();
                    Partition {
                        train: train.iter().map(|&i| ids[i].to_string()).collect(),
                        holdout: hold.iter().map(|&i| ids[i].to_string()).collect(),
                    }
                })
                .collect()
        }
        PartitionMode::BySource { train_tag } => {
            let train: Vec<String> = tasks
                .iter()
                .filter(|t| &t.source_tag == train_tag)
                .map(|t| t.id.clone())
                .collect();
            let pool: Vec<&str> = tasks
                .iter()
                .filter(|t| &t.source_tag != train_tag)
                .map(|t| t.id.as_str())
                .collect();
            if train.is_empty() || pool.is_empty() {
                return Err(Error::InfeasiblePartition(format!(
                    "source `{train_tag}` splits tasks into {} train and {} holdout candidates",
                    train.len(),
                    pool.len()
                )));
            }
            if holdout_size > pool.len() {
                return Err(Error::InfeasiblePartition(format!(
                    "holdout size {holdout_size} exceeds the {} holdout-source tasks",
                    pool.len()
                )));
            }
            (0..count)
                .map(|_| {
                    let mut hold =
                        rand::seq::index::sample(&mut rng, pool.len(), holdout_size).into_vec();
                    hold.sort_unstable();
                    Partition {
                        train: train.clone(),
                        holdout: hold.iter().map(|&i| pool[i].to_string()).collect(),
                    }
                })
                .collect()
        }
    };
    Ok(PartitionPlan {
        partitions,
        mode: mode.clone(),
        holdout_size,
        seed,
    })
}

/// Seed for a random filter on one partition, so that each partition draws a
/// fresh subset while the whole plan stays reproducible.
pub fn partition_seed(seed: u64, partition: usize) -> u64 {
    let mut z = seed
        ^ (partition as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Evaluates one filter on every partition of a plan, in partition order.
pub fn eval_filter_on_plan(
    spec: &FilterSpec,
    tasks: &TaskSet,
    change: &Change,
    plan: &PartitionPlan,
    store: &RunStore,
    settings: &EvalSettings,
) -> Result<Vec<FilterLossRecord>> {
    plan.partitions
        .par_iter()
        .enumerate()
        .map(|(k, part)| {
            let train = tasks.subset(&part.train)?;
            let holdouts = tasks.subset(&part.holdout)?;
            let spec = FilterSpec {
                seed: partition_seed(spec.seed, k),
                ..spec.clone()
            };
            let mut rec = eval_filter(&spec, &train, &holdouts, change, store, settings)?;
            rec.partition_index = k;
            Ok(rec)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WelchTest {
    pub t_stat: f64,
    pub df: f64,
    pub p_value: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Two-sided Welch's t-test. `None` when either sample has fewer than two
/// values.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let (t_stat, p_value) = if ma == mb {
            (0.0, 1.0)
        } else {
            ((ma - mb).signum() * f64::INFINITY, 0.0)
        };
        return Some(WelchTest {
            t_stat,
            df: na + nb - 2.0,
            p_value,
        });
    }
    let t_stat = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("welch df is positive");
    let p_value = (2.0 * dist.sf(t_stat.abs())).min(1.0);
    Some(WelchTest {
        t_stat,
        df,
        p_value,
    })
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContrastSummary {
    pub new_filter: String,
    pub baseline_filter: String,
    pub new_records: Vec<FilterLossRecord>,
    pub baseline_records: Vec<FilterLossRecord>,
    pub mean_new: f64,
    pub mean_baseline: f64,
    /// `mean_new - mean_baseline`; positive favours the new filter.
    pub mean_diff: f64,
    pub cross_entropy_new: f64,
    pub cross_entropy_baseline: f64,
    pub test: Option<WelchTest>,
    pub p_value: Option<f64>,
    pub significant: bool,
}

pub fn summarize_contrast(
    new_filter: String,
    baseline_filter: String,
    new_records: Vec<FilterLossRecord>,
    baseline_records: Vec<FilterLossRecord>,
) -> ContrastSummary {
    let a: Vec<f64> = new_records.iter().map(|r| r.log_loss).collect();
    let b: Vec<f64> = baseline_records.iter().map(|r| r.log_loss).collect();
    let (mean_new, mean_baseline) = (mean(&a), mean(&b));
    let test = welch_t_test(&a, &b);
    let p_value = test.map(|t| t.p_value);
    ContrastSummary {
        new_filter,
        baseline_filter,
        new_records,
        baseline_records,
        mean_new,
        mean_baseline,
        mean_diff: mean_new - mean_baseline,
        cross_entropy_new: -mean_new,
        cross_entropy_baseline: -mean_baseline,
        test,
        significant: p_value.is_some_and(|p| p < SIGNIFICANCE_LEVEL),
        p_value,
    }
}

/// Evaluates two filters on the same partitions and summarises the
/// difference in their log-losses.
pub fn contrast_filters(
    new: &FilterSpec,
    baseline: &FilterSpec,
    change: &Change,
    tasks: &TaskSet,
    plan: &PartitionPlan,
    store: &RunStore,
    settings: &EvalSettings,
) -> Result<ContrastSummary> {
    if plan.partitions.is_empty() {
        return Err(Error::InfeasiblePartition("plan has no partitions".into()));
    }
    let new_records = eval_filter_on_plan(new, tasks, change, plan, store, settings)?;
    let baseline_records = eval_filter_on_plan(baseline, tasks, change, plan, store, settings)?;
    Ok(summarize_contrast(
        new.name(),
        baseline.name(),
        new_records,
        baseline_records,
    ))
}

/// Writes records with the columns `partition,filter,y,t,log_loss`.
pub fn write_records_csv<'a>(
    records: impl IntoIterator<Item = &'a FilterLossRecord>,
    writer: impl Write,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["partition", "filter", "y", "t", "log_loss"])?;
    for r in records {
        w.write_record([
            r.partition_index.to_string(),
            r.filter.clone(),
            r.y.to_string(),
            r.t.to_string(),
            r.log_loss.to_string(),
        ])?;
    }
    w.flush()
}
