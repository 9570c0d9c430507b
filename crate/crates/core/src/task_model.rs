//! Tasks, run records and their on-disk formats.
//!
//! Tasks are stored one JSON object per line:
//!
//! ```text
//! {"id":"t1","source_tag":"openml","descriptors":{"datapoints_log10":3.2}}
//! ```
//!
//! Runs are stored as CSV with the header
//! `task_id,setup_id,run_index,quality,h_0,...,h_{d-1}`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Suffix marking descriptors that hold `log10` of a count.
pub const LOG10_SUFFIX: &str = "_log10";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub source_tag: String,
    pub descriptors: BTreeMap<String, f64>,
}

impl Task {
    pub fn new(id: impl Into<String>, source_tag: impl Into<String>) -> Self {
        Task {
            id: id.into(),
            source_tag: source_tag.into(),
            descriptors: BTreeMap::new(),
        }
    }

    pub fn with_descriptor(mut self, key: impl Into<String>, value: f64) -> Self {
        self.descriptors.insert(key.into(), value);
        self
    }

    pub fn descriptor(&self, key: &str) -> Result<f64> {
        self.descriptors
            .get(key)
            .copied()
            .ok_or_else(|| Error::MissingDescriptor {
                task: self.id.clone(),
                key: key.to_string(),
            })
    }

    pub fn validate(&self) -> Result<()> {
        for (key, &value) in &self.descriptors {
            let bad_count = key.ends_with(LOG10_SUFFIX) && value < 0.0;
            if !value.is_finite() || bad_count {
                return Err(Error::InvalidDescriptor {
                    task: self.id.clone(),
                    key: key.clone(),
                    value,
                });
            }
        }
        Ok(())
    }
}

/// `log10` of a raw count; counts below 1 are rejected.
pub fn log10_count(raw: f64) -> Option<f64> {
    (raw.is_finite() && raw >= 1.0).then(|| raw.log10())
}

/// Insertion-ordered collection of tasks with unique ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaskSet {
    tasks: Vec<Task>,
    index: HashMap<String, usize>,
}

impl TaskSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tasks(tasks: impl IntoIterator<Item = Task>) -> Result<Self> {
        let mut set = TaskSet::new();
        for task in tasks {
            set.push(task)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, task: Task) -> Result<()> {
        task.validate()?;
        if self.index.contains_key(&task.id) {
            return Err(Error::DuplicateTask(task.id));
        }
        self.index.insert(task.id.clone(), self.tasks.len());
        self.tasks.push(task);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Task> {
        self.index.get(id).map(|&i| &self.tasks[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Task> {
        self.tasks.iter()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn ids(&self) -> Vec<&str> {
        self.tasks.iter().map(|t| t.id.as_str()).collect()
    }

    /// Tasks with the given ids, in the order the ids are listed.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<TaskSet> {
        let mut out = TaskSet::new();
        for id in ids {
            let id = id.as_ref();
            let task = self
                .get(id)
                .ok_or_else(|| Error::UnknownTask(id.to_string()))?;
            out.push(task.clone())?;
        }
        Ok(out)
    }

    pub fn filter_by(&self, mut keep: impl FnMut(&Task) -> bool) -> TaskSet {
        let mut out = TaskSet::new();
        for task in self.tasks.iter().filter(|t| keep(t)) {
            out.index.insert(task.id.clone(), out.tasks.len());
            out.tasks.push(task.clone());
        }
        out
    }

    /// Concatenates two sets; ids must stay unique.
    pub fn merged(&self, other: &TaskSet) -> Result<TaskSet> {
        let mut out = self.clone();
        for task in other.iter() {
            out.push(task.clone())?;
        }
        Ok(out)
    }
}

impl<'a> IntoIterator for &'a TaskSet {
    type Item = &'a Task;
    type IntoIter = std::slice::Iter<'a, Task>;

    fn into_iter(self) -> Self::IntoIter {
        self.tasks.iter()
    }
}

#[derive(Deserialize)]
struct RawTask {
    id: String,
    source_tag: String,
    #[serde(default)]
    descriptors: BTreeMap<String, serde_json::Value>,
}

fn descriptor_value(value: &serde_json::Value) -> Option<f64> {
    match value {
        serde_json::Value::Number(n) => n.as_f64(),
        // Non-finite values cannot be JSON numbers; accept them as strings so
        // they are reported as invalid descriptors rather than parse errors.
        serde_json::Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
}

pub fn parse_tasks(reader: impl BufRead) -> Result<TaskSet> {
    let mut set = TaskSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTask = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut task = Task::new(raw.id, raw.source_tag);
        for (key, value) in raw.descriptors {
            let v = descriptor_value(&value).ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("descriptor `{key}` is not a number"),
            })?;
            task.descriptors.insert(key, v);
        }
        set.push(task)?;
    }
    Ok(set)
}

pub fn ingest_tasks(path: impl AsRef<Path>) -> Result<TaskSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_tasks(BufReader::new(file))
}

pub fn write_tasks_to(tasks: &TaskSet, mut writer: impl Write) -> std::io::Result<()> {
    for task in tasks {
        serde_json::to_writer(&mut writer, task)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_tasks(tasks: &TaskSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tasks_to(tasks, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub task_id: String,
    pub setup_id: String,
    pub run_index: u32,
    pub hyperparams: Vec<f64>,
    pub quality: f64,
}

/// A baseline/modified setup pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Change {
    pub baseline_setup: String,
    pub modified_setup: String,
}

impl Change {
    pub fn new(baseline: impl Into<String>, modified: impl Into<String>) -> Self {
        Change {
            baseline_setup: baseline.into(),
            modified_setup: modified.into(),
        }
    }
}

/// Observed runs keyed by `(task_id, setup_id)`, each list sorted by run index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStore {
    runs: BTreeMap<(String, String), Vec<RunRecord>>,
    hp_dim: Option<usize>,
}

impl RunStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hp_dim(&self) -> Option<usize> {
        self.hp_dim
    }

    pub fn insert(&mut self, record: RunRecord) -> Result<()> {
        if !(0.0..=1.0).contains(&record.quality) {
            return Err(Error::InvalidQuality {
                line: 0,
                value: record.quality,
            });
        }
        match self.hp_dim {
            Some(d) if d != record.hyperparams.len() => {
                return Err(Error::ArityMismatch {
                    expected: d,
                    found: record.hyperparams.len(),
                })
            }
            _ => self.hp_dim = Some(record.hyperparams.len()),
        }
        let key = (record.task_id.clone(), record.setup_id.clone());
        let runs = self.runs.entry(key).or_default();
        match runs.binary_search_by_key(&record.run_index, |r| r.run_index) {
            Ok(_) => Err(Error::DuplicateRun {
                task_id: record.task_id,
                setup_id: record.setup_id,
                run_index: record.run_index,
            }),
            Err(pos) => {
                runs.insert(pos, record);
                Ok(())
            }
        }
    }

    pub fn runs(&self, task_id: &str, setup_id: &str) -> Result<&[RunRecord]> {
        self.runs
            .get(&(task_id.to_string(), setup_id.to_string()))
            .map(Vec::as_slice)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| Error::NoRuns {
                task: task_id.to_string(),
                setup: setup_id.to_string(),
            })
    }

    /// Qualities for one task under one setup, ordered by run index.
    pub fn query_qualities(&self, task_id: &str, setup_id: &str) -> Result<Vec<f64>> {
        Ok(self
            .runs(task_id, setup_id)?
            .iter()
            .map(|r| r.quality)
            .collect())
    }

    pub fn mean_quality(&self, task_id: &str, setup_id: &str) -> Result<f64> {
        let runs = self.runs(task_id, setup_id)?;
        Ok(runs.iter().map(|r| r.quality).sum::<f64>() / runs.len() as f64)
    }

    pub fn setups(&self) -> BTreeSet<&str> {
        self.runs.keys().map(|(_, s)| s.as_str()).collect()
    }

    pub fn num_keys(&self) -> usize {
        self.runs.len()
    }

    pub fn num_records(&self) -> usize {
        self.runs.values().map(Vec::len).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.values().flatten()
    }
}

const RUN_HEADER_PREFIX: [&str; 4] = ["task_id", "setup_id", "run_index", "quality"];

pub fn parse_runs(reader: impl std::io::Read, tasks: &TaskSet) -> Result<RunStore> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let dim = header.len().saturating_sub(RUN_HEADER_PREFIX.len());
    let header_ok = header.len() >= RUN_HEADER_PREFIX.len()
        && header.iter().zip(RUN_HEADER_PREFIX).all(|(a, b)| a == b)
        && (0..dim).all(|i| header[RUN_HEADER_PREFIX.len() + i] == format!("h_{i}"));
    if !header_ok {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "unexpected header `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut store = RunStore::new();
    store.hp_dim = Some(dim);
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let parse_err = |message: String| Error::Parse { line, message };
        if row.len() < RUN_HEADER_PREFIX.len() {
            return Err(parse_err(format!(
                "expected at least 4 fields, got {}",
                row.len()
            )));
        }
        let found = row.len() - RUN_HEADER_PREFIX.len();
        if found != dim {
            return Err(Error::ArityMismatch {
                expected: dim,
                found,
            });
        }
        let task_id = row[0].to_string();
        if !tasks.contains(&task_id) {
            return Err(Error::UnknownTask(task_id));
        }
        let run_index: u32 = row[2]
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("run_index `{}`: {e}", &row[2])))?;
        let quality: f64 = row[3]
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("quality `{}`: {e}", &row[3])))?;
        if !(0.0..=1.0).contains(&quality) {
            return Err(Error::InvalidQuality {
                line,
                value: quality,
            });
        }
        let hyperparams = row
            .iter()
            .skip(RUN_HEADER_PREFIX.len())
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| {
                        parse_err(format!("hyperparameter `{v}` is not a finite number"))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        store.insert(RunRecord {
            task_id,
            setup_id: row[1].to_string(),
            run_index,
            hyperparams,
            quality,
        })?;
    }
    Ok(store)
}

pub fn ingest_runs(path: impl AsRef<Path>, tasks: &TaskSet) -> Result<RunStore> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_runs(BufReader::new(file), tasks)
}

pub fn write_runs_to(store: &RunStore, writer: impl Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let dim = store.hp_dim.unwrap_or(0);
    let mut header: Vec<String> = RUN_HEADER_PREFIX.iter().map(|s| s.to_string()).collect();
    header.extend((0..dim).map(|i| format!("h_{i}")));
    w.write_record(&header)?;
    for r in store.records() {
        let mut row = vec![
            r.task_id.clone(),
            r.setup_id.clone(),
            r.run_index.to_string(),
            r.quality.to_string(),
        ];
        row.extend(r.hyperparams.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()
}

pub fn write_runs(store: &RunStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_runs_to(store, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}
