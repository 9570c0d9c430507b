//! One function per subcommand. Each writes its report files into the output
//! directory and returns the computed values so callers can inspect them.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use taskfilter_core::filter_eval::{eval_filter_on_plan, summarize_contrast, write_records_csv};
use taskfilter_core::synth::{Benchmark, BenchmarkSpec};
use taskfilter_core::task_model::{ingest_runs, ingest_tasks, write_runs, write_tasks};
use taskfilter_core::{
    contrast_filters, eval_system_change, sample_partitions, ContrastSummary, Error, EvalSettings,
    FilterKind, FilterLossRecord, FilterSpec, ImprovementReport, PartitionPlan, RunStore, TaskSet,
};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const RUNS_FILE: &str = "runs.csv";

pub struct Dataset {
    pub tasks: TaskSet,
    pub store: RunStore,
}

fn benchmark_spec(cfg: &ExperimentConfig) -> BenchmarkSpec {
    BenchmarkSpec {
        seed: cfg.seed,
        ..cfg.simulate.clone()
    }
}

/// Task and run files from `[data]`, or a fresh simulation when none are set.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    match (&cfg.data.tasks, &cfg.data.runs) {
        (Some(tasks), Some(runs)) => {
            let tasks = ingest_tasks(tasks)?;
            let store = ingest_runs(runs, &tasks)?;
            Ok(Dataset { tasks, store })
        }
        (None, None) => {
            let Benchmark {
                population, store, ..
            } = benchmark_spec(cfg).build()?;
            Ok(Dataset {
                tasks: population.tasks,
                store,
            })
        }
        _ => Err(CliError::Invalid(
            "data.tasks and data.runs must be given together".into(),
        )),
    }
}

fn settings(cfg: &ExperimentConfig, store: &RunStore) -> EvalSettings {
    let oracle_setups = if cfg.data.oracle_setups.is_empty() {
        store.setups().into_iter().map(String::from).collect()
    } else {
        cfg.data.oracle_setups.clone()
    };
    EvalSettings {
        eps: cfg.data.eps,
        oracle_setups,
        access: cfg.data.holdout_access,
    }
}

/// Random filters draw from the configured seed offset by the global one.
fn seeded(spec: &FilterSpec, cfg: &ExperimentConfig) -> FilterSpec {
    FilterSpec {
        seed: spec.seed.wrapping_add(cfg.seed),
        ..spec.clone()
    }
}

fn plan(
    cfg: &ExperimentConfig,
    tasks: &TaskSet,
    holdout_size: usize,
) -> taskfilter_core::Result<PartitionPlan> {
    sample_partitions(
        tasks,
        &cfg.partition.mode(),
        holdout_size,
        cfg.partition.count,
        cfg.seed,
    )
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn write_csv<R, I>(path: &Path, header: &[&str], rows: R) -> Result<()>
where
    R: IntoIterator<Item = I>,
    I: IntoIterator<Item = String>,
{
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let io = |e: csv::Error| CliError::io(path, e.into());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_records(path: &Path, records: &[FilterLossRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_records_csv(records, BufWriter::new(file)).map_err(|e| CliError::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Benchmark> {
    prepare_out(out)?;
    let bench = benchmark_spec(cfg).build()?;
    write_tasks(bench.tasks(), out.join(TASKS_FILE))?;
    write_runs(&bench.store, out.join(RUNS_FILE))?;
    println!(
        "simulated {} tasks and {} runs over {} setups into {}",
        bench.tasks().len(),
        bench.store.num_records(),
        bench.setups.len(),
        out.display()
    );
    Ok(bench)
}

/// Loads the data and reports counts per source tag and per setup.
pub fn ingest_check(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<(String, String)>> {
    prepare_out(out)?;
    let data = load_data(cfg)?;
    let mut rows = vec![
        ("tasks".to_string(), data.tasks.len().to_string()),
        (
            "run_records".to_string(),
            data.store.num_records().to_string(),
        ),
        (
            "hp_dim".to_string(),
            data.store
                .hp_dim()
                .map(|d| d.to_string())
                .unwrap_or_default(),
        ),
    ];
    let mut by_tag: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &data.tasks {
        *by_tag.entry(t.source_tag.as_str()).or_default() += 1;
    }
    rows.extend(
        by_tag
            .into_iter()
            .map(|(tag, n)| (format!("tasks[{tag}]"), n.to_string())),
    );
    for setup in data.store.setups() {
        let covered = data
            .tasks
            .iter()
            .filter(|t| data.store.runs(&t.id, setup).is_ok())
            .count();
        rows.push((format!("tasks_with_runs[{setup}]"), covered.to_string()));
    }
    write_csv(
        &out.join("ingest_summary.csv"),
        &["item", "value"],
        rows.iter().map(|(k, v)| [k.clone(), v.clone()]),
    )?;
    for (k, v) in &rows {
        println!("{k}: {v}");
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapSample {
    pub n: usize,
    pub sample: usize,
    pub aggregate: f64,
}

pub fn eval_change(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<(ImprovementReport, Vec<BootstrapSample>)> {
    prepare_out(out)?;
    let data = load_data(cfg)?;
    let change = cfg.change.change();
    let report = eval_system_change(&data.tasks, &change, &data.store, cfg.data.eps)?;
    write_csv(
        &out.join("eval_change.csv"),
        &["task_id", "source_tag", "prob_improved", "clipped", "eps"],
        report.per_task.iter().map(|r| {
            let tag = data
                .tasks
                .get(&r.task_id)
                .map(|t| t.source_tag.clone())
                .unwrap_or_default();
            [
                r.task_id.clone(),
                tag,
                r.prob_improved.to_string(),
                r.clipped.to_string(),
                r.eps.to_string(),
            ]
        }),
    )?;
    write_csv(
        &out.join("eval_change_summary.csv"),
        &["baseline", "modified", "tasks", "aggregate"],
        [[
            change.baseline_setup.clone(),
            change.modified_setup.clone(),
            report.per_task.len().to_string(),
            report.aggregate.to_string(),
        ]],
    )?;

    // Aggregates over random task subsets of each size.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::new();
    for &n in &cfg.eval_change.bootstrap_sizes {
        if n == 0 || n > data.tasks.len() {
            eprintln!(
                "skipping bootstrap size {n}: {} tasks available",
                data.tasks.len()
            );
            continue;
        }
        for sample in 0..cfg.eval_change.bootstrap_samples {
            let mut idx = rand::seq::index::sample(&mut rng, data.tasks.len(), n).into_vec();
            idx.sort_unstable();
            let ids: Vec<&str> = idx
                .iter()
                .map(|&i| data.tasks.tasks()[i].id.as_str())
                .collect();
            let subset = data.tasks.subset(&ids)?;
            let aggregate =
                eval_system_change(&subset, &change, &data.store, cfg.data.eps)?.aggregate;
            samples.push(BootstrapSample {
                n,
                sample,
                aggregate,
            });
        }
    }
    write_csv(
        &out.join("eval_change_bootstrap.csv"),
        &["n", "sample", "aggregate"],
        samples.iter().map(|s| {
            [
                s.n.to_string(),
                s.sample.to_string(),
                s.aggregate.to_string(),
            ]
        }),
    )?;
    println!(
        "{} -> {}: aggregate improvement probability {:.4} over {} tasks",
        change.baseline_setup,
        change.modified_setup,
        report.aggregate,
        report.per_task.len()
    );
    Ok((report, samples))
}

pub fn eval_filter(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Vec<FilterLossRecord>>> {
    prepare_out(out)?;
    let data = load_data(cfg)?;
    let settings = settings(cfg, &data.store);
    let change = cfg.change.change();
    let plan = plan(cfg, &data.tasks, cfg.partition.holdout_size)?;
    let per_filter = cfg
        .filters
        .0
        .iter()
        .map(|f| {
            eval_filter_on_plan(
                &seeded(f, cfg),
                &data.tasks,
                &change,
                &plan,
                &data.store,
                &settings,
            )
        })
        .collect::<taskfilter_core::Result<Vec<_>>>()?;
    let all: Vec<FilterLossRecord> = per_filter.iter().flatten().cloned().collect();
    write_records(&out.join("eval_filter.csv"), &all)?;
    let summary: Vec<[String; 4]> = per_filter
        .iter()
        .zip(&cfg.filters.0)
        .map(|(recs, f)| {
            let m = taskfilter_core::filter_eval::mean(
                &recs.iter().map(|r| r.log_loss).collect::<Vec<_>>(),
            );
            [
                f.name(),
                recs.len().to_string(),
                m.to_string(),
                (-m).to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("eval_filter_summary.csv"),
        &["filter", "partitions", "mean_log_loss", "cross_entropy"],
        summary.clone(),
    )?;
    for [name, n, m, _] in &summary {
        println!("{name}: mean log-loss {m} over {n} partitions");
    }
    Ok(per_filter)
}

pub fn contrast(cfg: &ExperimentConfig, out: &Path) -> Result<ContrastSummary> {
    prepare_out(out)?;
    let new = seeded(cfg.find_filter(&cfg.contrast.new)?, cfg);
    let baseline = seeded(cfg.find_filter(&cfg.contrast.baseline)?, cfg);
    let data = load_data(cfg)?;
    let settings = settings(cfg, &data.store);
    let plan = plan(cfg, &data.tasks, cfg.partition.holdout_size)?;
    let c = contrast_filters(
        &new,
        &baseline,
        &cfg.change.change(),
        &data.tasks,
        &plan,
        &data.store,
        &settings,
    )?;
    let records: Vec<FilterLossRecord> = c
        .new_records
        .iter()
        .chain(&c.baseline_records)
        .cloned()
        .collect();
    write_records(&out.join("contrast.csv"), &records)?;
    write_csv(
        &out.join("contrast_summary.csv"),
        &[
            "new_filter",
            "baseline_filter",
            "partitions",
            "mean_new",
            "mean_baseline",
            "mean_diff",
            "cross_entropy_new",
            "cross_entropy_baseline",
            "t_stat",
            "df",
            "p_value",
            "significant",
        ],
        [[
            c.new_filter.clone(),
            c.baseline_filter.clone(),
            c.new_records.len().to_string(),
            c.mean_new.to_string(),
            c.mean_baseline.to_string(),
            c.mean_diff.to_string(),
            c.cross_entropy_new.to_string(),
            c.cross_entropy_baseline.to_string(),
            opt(c.test.map(|t| t.t_stat)),
            opt(c.test.map(|t| t.df)),
            opt(c.p_value),
            c.significant.to_string(),
        ]],
    )?;
    println!(
        "{} vs {} over {} partitions: mean log-loss {:.4} vs {:.4} (diff {:+.4}), p = {}{}",
        c.new_filter,
        c.baseline_filter,
        c.new_records.len(),
        c.mean_new,
        c.mean_baseline,
        c.mean_diff,
        c.p_value
            .map(|p| format!("{p:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        if c.significant { ", significant" } else { "" },
    );
    Ok(c)
}

/// One (filter, length, holdout size) cell of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub filter: String,
    pub length: usize,
    pub holdout_size: usize,
    pub records: Vec<FilterLossRecord>,
    pub mean_log_loss: Option<f64>,
    pub loss_diff_from_random: Option<f64>,
    pub p_value: Option<f64>,
    /// `None` when the cell was evaluated, otherwise why it is absent.
    pub absent: Option<String>,
}

impl SweepCell {
    fn absent(filter: String, length: usize, holdout_size: usize, reason: String) -> Self {
        SweepCell {
            filter,
            length,
            holdout_size,
            records: Vec::new(),
            mean_log_loss: None,
            loss_diff_from_random: None,
            p_value: None,
            absent: Some(reason),
        }
    }
}

/// Errors that make a single sweep cell empty rather than failing the sweep.
fn is_infeasible(e: &Error) -> bool {
    matches!(
        e,
        Error::InfeasiblePartition(_)
            | Error::EmptyFilterOutput
            | Error::EmptyTrainSet
            | Error::EmptyTrainingSet
            | Error::TooFewPoints(_)
            | Error::InsufficientHoldoutRuns { .. }
            | Error::InsufficientSetups(_)
    )
}

fn sweep_group(
    cfg: &ExperimentConfig,
    data: &Dataset,
    settings: &EvalSettings,
    plan: &std::result::Result<PartitionPlan, String>,
    holdout_size: usize,
    length: usize,
) -> Result<Vec<SweepCell>> {
    let filters = &cfg.filters.0;
    let plan = match plan {
        Ok(p) => p,
        Err(reason) => {
            return Ok(filters
                .iter()
                .map(|f| SweepCell::absent(f.name(), length, holdout_size, reason.clone()))
                .collect())
        }
    };
    let change = cfg.change.change();
    let run = |spec: &FilterSpec| -> Result<std::result::Result<Vec<FilterLossRecord>, String>> {
        let spec = seeded(&spec.with_length(length), cfg);
        match eval_filter_on_plan(&spec, &data.tasks, &change, plan, &data.store, settings) {
            Ok(r) => Ok(Ok(r)),
            Err(e) if is_infeasible(&e) => Ok(Err(e.to_string())),
            Err(e) => Err(e.into()),
        }
    };
    let reference = filters
        .iter()
        .find(|f| f.kind == FilterKind::Random)
        .cloned()
        .unwrap_or_else(|| FilterSpec::random(length, 0));
    let reference = run(&reference)?.ok();
    let losses = |r: &[FilterLossRecord]| r.iter().map(|x| x.log_loss).collect::<Vec<_>>();

    let mut cells = Vec::with_capacity(filters.len());
    for f in filters {
        let records = match run(f)? {
            Ok(r) => r,
            Err(reason) => {
                cells.push(SweepCell::absent(f.name(), length, holdout_size, reason));
                continue;
            }
        };
        let mine = losses(&records);
        let (diff, p) = match &reference {
            Some(rr) => {
                let s = summarize_contrast(f.name(), "random".into(), records.clone(), rr.clone());
                (Some(s.mean_diff), s.p_value)
            }
            None => (None, None),
        };
        cells.push(SweepCell {
            filter: f.name(),
            length,
            holdout_size,
            mean_log_loss: Some(taskfilter_core::filter_eval::mean(&mine)),
            loss_diff_from_random: diff,
            p_value: p,
            records,
            absent: None,
        });
    }
    Ok(cells)
}

/// Grid over holdout sizes, filter lengths and filters. Cells are evaluated
/// in parallel and reported in grid order.
pub fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SweepCell>> {
    prepare_out(out)?;
    let data = load_data(cfg)?;
    let settings = settings(cfg, &data.store);
    let plans: Vec<std::result::Result<PartitionPlan, String>> = cfg
        .sweep
        .holdout_sizes
        .iter()
        .map(|&h| match plan(cfg, &data.tasks, h) {
            Ok(p) => Ok(Ok(p)),
            Err(e) if is_infeasible(&e) => Ok(Err(e.to_string())),
            Err(e) => Err(CliError::from(e)),
        })
        .collect::<Result<_>>()?;
    let grid: Vec<(usize, usize)> = (0..plans.len())
        .flat_map(|i| cfg.sweep.lengths.iter().map(move |&l| (i, l)))
        .collect();
    let groups = grid
        .par_iter()
        .map(|&(i, length)| {
            sweep_group(
                cfg,
                &data,
                &settings,
                &plans[i],
                cfg.sweep.holdout_sizes[i],
                length,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<SweepCell> = groups.into_iter().flatten().collect();

    write_csv(
        &out.join("sweep.csv"),
        &[
            "filter",
            "length",
            "holdout_size",
            "partitions",
            "mean_log_loss",
            "cross_entropy",
            "loss_diff_from_random",
            "p_value",
            "status",
        ],
        cells.iter().map(|c| {
            [
                c.filter.clone(),
                c.length.to_string(),
                c.holdout_size.to_string(),
                c.records.len().to_string(),
                opt(c.mean_log_loss),
                opt(c.mean_log_loss.map(|m| -m)),
                opt(c.loss_diff_from_random),
                opt(c.p_value),
                match &c.absent {
                    None => "ok".to_string(),
                    Some(reason) => format!("absent: {reason}"),
                },
            ]
        }),
    )?;
    write_csv(
        &out.join("sweep_records.csv"),
        &[
            "holdout_size",
            "length",
            "partition",
            "filter",
            "y",
            "t",
            "log_loss",
        ],
        cells.iter().flat_map(|c| {
            c.records.iter().map(move |r| {
                [
                    c.holdout_size.to_string(),
                    c.length.to_string(),
                    r.partition_index.to_string(),
                    r.filter.clone(),
                    r.y.to_string(),
                    r.t.to_string(),
                    r.log_loss.to_string(),
                ]
            })
        }),
    )?;
    let absent = cells.iter().filter(|c| c.absent.is_some()).count();
    println!(
        "swept {} cells ({} absent) into {}",
        cells.len(),
        absent,
        out.join("sweep.csv").display()
    );
    Ok(cells)
}
