//! Filters choose a subset of train tasks given what is known about the
//! holdout tasks.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{
    descriptor_similarity, oracle_similarity, performance_descriptor_similarity, CorrelationKind,
    SimilarityVector, SurrogateParams,
};
use crate::task_model::{RunStore, Task, TaskSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Random,
    DescriptorSim,
    PerformanceSim,
    OracleSim,
    All,
}

impl FilterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::Random => "random",
            FilterKind::DescriptorSim => "descriptor_sim",
            FilterKind::PerformanceSim => "performance_sim",
            FilterKind::OracleSim => "oracle_sim",
            FilterKind::All => "all",
        }
    }

    pub fn is_similarity(self) -> bool {
        matches!(
            self,
            FilterKind::DescriptorSim | FilterKind::PerformanceSim | FilterKind::OracleSim
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    /// Number of tasks returned; truncated to the train-set size.
    pub length: usize,
    #[serde(default)]
    pub descriptor_keys: Vec<String>,
    #[serde(default)]
    pub corr: CorrelationKind,
    #[serde(default)]
    pub seed: u64,
    /// Per-holdout selection size when voting; defaults to `length`.
    #[serde(default)]
    pub inner_length: Option<usize>,
    #[serde(default)]
    pub surrogate: SurrogateParams,
    #[serde(default)]
    pub label: Option<String>,
}

impl FilterSpec {
    pub fn new(kind: FilterKind, length: usize) -> Self {
        FilterSpec {
            kind,
            length,
            descriptor_keys: Vec::new(),
            corr: CorrelationKind::default(),
            seed: 0,
            inner_length: None,
            surrogate: SurrogateParams::default(),
            label: None,
        }
    }

    pub fn random(length: usize, seed: u64) -> Self {
        FilterSpec {
            seed,
            ..Self::new(FilterKind::Random, length)
        }
    }

    pub fn all() -> Self {
        Self::new(FilterKind::All, usize::MAX)
    }

    pub fn descriptor<S: Into<String>>(length: usize, keys: impl IntoIterator<Item = S>) -> Self {
        FilterSpec {
            descriptor_keys: keys.into_iter().map(Into::into).collect(),
            ..Self::new(FilterKind::DescriptorSim, length)
        }
    }

    pub fn with_length(&self, length: usize) -> Self {
        FilterSpec {
            length,
            ..self.clone()
        }
    }

    pub fn name(&self) -> String {
        match &self.label {
            Some(l) => l.clone(),
            None => self.kind.as_str().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || self.inner_length == Some(0) {
            return Err(Error::InvalidSpec(
                "filter length must be at least 1".into(),
            ));
        }
        if self.kind == FilterKind::DescriptorSim && self.descriptor_keys.is_empty() {
            return Err(Error::InvalidSpec(
                "descriptor_sim filter needs at least one descriptor key".into(),
            ));
        }
        Ok(())
    }
}

/// How much of the holdout tasks' run history a filter may read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutAccess {
    /// Descriptors plus baseline-setup runs.
    DescriptorOnly,
    /// Any run on any setup; needed by the oracle metric.
    #[default]
    Full,
}

/// Shared inputs for similarity filters.
#[derive(Clone, Copy, Debug)]
pub struct FilterContext<'a> {
    pub store: &'a RunStore,
    pub baseline_setup: &'a str,
    pub oracle_setups: &'a [String],
    pub access: HoldoutAccess,
}

impl<'a> FilterContext<'a> {
    pub fn new(store: &'a RunStore, baseline_setup: &'a str, oracle_setups: &'a [String]) -> Self {
        FilterContext {
            store,
            baseline_setup,
            oracle_setups,
            access: HoldoutAccess::Full,
        }
    }

    pub fn with_access(self, access: HoldoutAccess) -> Self {
        FilterContext { access, ..self }
    }
}

pub fn similarity_for(
    spec: &FilterSpec,
    train: &TaskSet,
    holdout: &Task,
    ctx: &FilterContext<'_>,
) -> Result<SimilarityVector> {
    match spec.kind {
        FilterKind::DescriptorSim => descriptor_similarity(train, holdout, &spec.descriptor_keys),
        FilterKind::PerformanceSim => performance_descriptor_similarity(
            train,
            &holdout.id,
            ctx.baseline_setup,
            ctx.store,
            spec.corr,
            spec.surrogate,
        ),
        FilterKind::OracleSim => {
            if ctx.access != HoldoutAccess::Full {
                return Err(Error::OracleAccessDenied);
            }
            oracle_similarity(train, &holdout.id, ctx.oracle_setups, ctx.store, spec.corr)
        }
        FilterKind::Random | FilterKind::All => Err(Error::InvalidSpec(format!(
            "`{}` is not a similarity filter",
            spec.kind.as_str()
        ))),
    }
}

fn take_ranked(train: &TaskSet, ranked: &[&str], n: usize) -> Result<TaskSet> {
    let n = n.min(ranked.len());
    train.subset(&ranked[..n])
}

/// Top-`length` train tasks by similarity to one holdout task.
pub fn apply_sim_filter(
    spec: &FilterSpec,
    train: &TaskSet,
    holdout: &Task,
    ctx: &FilterContext<'_>,
) -> Result<TaskSet> {
    spec.validate()?;
    let sims = similarity_for(spec, train, holdout, ctx)?;
    take_ranked(train, &sims.ranking(), spec.length)
}

/// Uniform sample without replacement, in train-set order.
pub fn apply_random_filter(spec: &FilterSpec, train: &TaskSet) -> Result<TaskSet> {
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let n = spec.length.min(train.len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut picked = rand::seq::index::sample(&mut rng, train.len(), n).into_vec();
    picked.sort_unstable();
    let ids: Vec<&str> = picked
        .iter()
        .map(|&i| train.tasks()[i].id.as_str())
        .collect();
    train.subset(&ids)
}

/// Runs the inner similarity filter once per holdout task and keeps the
/// `length` train tasks with the most votes.
///
/// Ties on votes go to the larger similarity summed over all holdouts, then to
/// the smaller task id.
pub fn apply_voting_filter(
    inner: &FilterSpec,
    train: &TaskSet,
    holdouts: &TaskSet,
    length: usize,
    ctx: &FilterContext<'_>,
) -> Result<TaskSet> {
    inner.validate()?;
    if length == 0 {
        return Err(Error::InvalidSpec(
            "filter length must be at least 1".into(),
        ));
    }
    if holdouts.is_empty() {
        return Err(Error::EmptyTaskSet);
    }
    if train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let mut votes: HashMap<&str, (usize, f64)> =
        train.iter().map(|t| (t.id.as_str(), (0, 0.0))).collect();
    for holdout in holdouts {
        let sims = similarity_for(inner, train, holdout, ctx)?;
        let ranked = sims.ranking();
        for id in ranked.iter().take(inner.length) {
            votes.get_mut(*id).expect("ranked ids come from train").0 += 1;
        }
        for (id, s) in &sims.values {
            votes
                .get_mut(id.as_str())
                .expect("similarity ids come from train")
                .1 += s;
        }
    }
    let mut order: Vec<(&str, usize, f64)> =
        votes.into_iter().map(|(id, (v, s))| (id, v, s)).collect();
    order.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| b.2.total_cmp(&a.2))
            .then_with(|| a.0.cmp(b.0))
    });
    let ranked: Vec<&str> = order.into_iter().map(|(id, _, _)| id).collect();
    take_ranked(train, &ranked, length)
}

/// Applies any filter kind against a set of holdout tasks. Similarity filters
/// go through the voting filter, which reduces to the plain similarity filter
/// for a single holdout.
pub fn apply_filter(
    spec: &FilterSpec,
    train: &TaskSet,
    holdouts: &TaskSet,
    ctx: &FilterContext<'_>,
) -> Result<TaskSet> {
    spec.validate()?;
    match spec.kind {
        FilterKind::Random => apply_random_filter(spec, train),
        FilterKind::All => {
            if train.is_empty() {
                return Err(Error::EmptyTrainSet);
            }
            Ok(train.clone())
        }
        _ => {
            let inner = FilterSpec {
                length: spec.inner_length.unwrap_or(spec.length),
                ..spec.clone()
            };
            apply_voting_filter(&inner, train, holdouts, spec.length, ctx)
        }
    }
}
