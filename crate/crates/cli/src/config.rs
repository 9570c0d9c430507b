//! Declarative experiment configuration, read from TOML.
//!
//! Every section has defaults, so an empty file (or no file at all) describes
//! a complete experiment on the built-in simulator.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use taskfilter_core::synth::BenchmarkSpec;
use taskfilter_core::{Change, Epsilon, FilterKind, FilterSpec, HoldoutAccess, PartitionMode};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Global seed; feeds the simulator, the partition sampler, random
    /// filters and bootstrap draws.
    pub seed: u64,
    pub data: DataConfig,
    pub change: ChangeConfig,
    pub simulate: BenchmarkSpec,
    pub partition: PartitionConfig,
    pub filters: FilterList,
    pub contrast: ContrastConfig,
    pub sweep: SweepConfig,
    pub eval_change: EvalChangeConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Task file (JSON lines). When both files are absent the data comes from
    /// the simulator.
    pub tasks: Option<PathBuf>,
    pub runs: Option<PathBuf>,
    pub holdout_access: HoldoutAccess,
    /// Setups compared by the oracle metric; all setups in the store if empty.
    pub oracle_setups: Vec<String>,
    pub eps: Epsilon,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChangeConfig {
    pub baseline: String,
    pub modified: String,
}

impl Default for ChangeConfig {
    fn default() -> Self {
        ChangeConfig {
            baseline: "default".into(),
            modified: "dnn_only".into(),
        }
    }
}

impl ChangeConfig {
    pub fn change(&self) -> Change {
        Change::new(&self.baseline, &self.modified)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionModeName {
    #[default]
    BySource,
    RandomSplit,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub mode: PartitionModeName,
    /// Source tag of the train tasks in `by_source` mode.
    pub train_tag: String,
    pub holdout_size: usize,
    pub count: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            mode: PartitionModeName::BySource,
            train_tag: "dev".into(),
            holdout_size: 18,
            count: 30,
        }
    }
}

impl PartitionConfig {
    pub fn mode(&self) -> PartitionMode {
        match self.mode {
            PartitionModeName::BySource => PartitionMode::BySource {
                train_tag: self.train_tag.clone(),
            },
            PartitionModeName::RandomSplit => PartitionMode::RandomSplit,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(transparent)]
pub struct FilterList(pub Vec<FilterSpec>);

impl Default for FilterList {
    fn default() -> Self {
        FilterList(vec![
            FilterSpec::random(3, 0),
            FilterSpec::descriptor(3, ["datapoints_log10"]),
            FilterSpec::new(FilterKind::PerformanceSim, 3),
            FilterSpec::new(FilterKind::OracleSim, 3),
            FilterSpec::all(),
        ])
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastConfig {
    /// Filter names (label or kind) from the `filters` list.
    pub new: String,
    pub baseline: String,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            new: "descriptor_sim".into(),
            baseline: "random".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lengths: Vec<usize>,
    pub holdout_sizes: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            lengths: vec![1, 2, 3, 6, 12],
            holdout_sizes: vec![1, 8, 18],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalChangeConfig {
    /// Subset sizes for bootstrap aggregates; empty disables the bootstrap.
    pub bootstrap_sizes: Vec<usize>,
    pub bootstrap_samples: usize,
}

impl Default for EvalChangeConfig {
    fn default() -> Self {
        EvalChangeConfig {
            bootstrap_sizes: vec![3, 10],
            bootstrap_samples: 200,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file. Relative data paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text).map_err(|message| CliError::Config {
            path: path.display().to_string(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.tasks, &mut cfg.data.runs]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn find_filter(&self, name: &str) -> Result<&FilterSpec> {
        self.filters
            .0
            .iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| CliError::Invalid(format!("no filter named `{name}` in [[filters]]")))
    }

    /// Checks what can be checked before touching any data.
    pub fn validate(&self) -> Result<()> {
        if self.data.tasks.is_some() != self.data.runs.is_some() {
            return Err(CliError::Invalid(
                "data.tasks and data.runs must be given together".into(),
            ));
        }
        for f in &self.filters.0 {
            f.validate()?;
        }
        if self.data.holdout_access == HoldoutAccess::DescriptorOnly
            && self
                .filters
                .0
                .iter()
                .any(|f| f.kind == FilterKind::OracleSim)
        {
            return Err(taskfilter_core::Error::OracleAccessDenied.into());
        }
        if self.partition.count == 0 {
            return Err(CliError::Invalid(
                "partition.count must be at least 1".into(),
            ));
        }
        Ok(())
    }
}
