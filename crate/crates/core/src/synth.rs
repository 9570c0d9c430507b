//! Synthetic AutoML benchmark.
//!
//! Tasks get descriptors drawn from per-population normal distributions, and a
//! hidden latent vector obtained from the centred descriptors through a
//! fixed random linear map plus a little noise. A setup's quality on a task
//! run at hyperparameters `h` is
//!
//! ```text
//! clamp01(base + a * tanh(z . e) - c * |h - h*(z)|^2 + noise)
//! ```
//!
//! where `e` is the setup's effect vector and `h*(z)` its optimum map. The
//! latent vectors never leave this module: written task files carry only
//! descriptors.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task_model::{Change, RunRecord, RunStore, Task, TaskSet, LOG10_SUFFIX};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub n_tasks: usize,
    pub descriptor_means: BTreeMap<String, f64>,
    pub descriptor_stdevs: BTreeMap<String, f64>,
    pub latent_dim: usize,
    /// Added to the means when sampling; the latent map still centres on
    /// the unshifted means, so a shift moves the latent vectors too.
    #[serde(default)]
    pub shift_offset: BTreeMap<String, f64>,
    pub source_tag: String,
    pub id_prefix: String,
    pub seed: u64,
    /// Seed of the descriptor-to-latent map; populations that should share
    /// one world must share this seed.
    pub latent_seed: u64,
    pub latent_noise: f64,
}

impl PopulationSpec {
    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::InvalidSpec("latent_dim must be at least 1".into()));
        }
        if self
            .descriptor_means
            .keys()
            .ne(self.descriptor_stdevs.keys())
        {
            return Err(Error::InvalidSpec(
                "descriptor means and stdevs must name the same descriptors".into(),
            ));
        }
        if let Some((k, s)) = self
            .descriptor_stdevs
            .iter()
            .find(|(_, s)| s.is_nan() || **s <= 0.0)
        {
            return Err(Error::InvalidSpec(format!(
                "stdev of `{k}` must be positive, got {s}"
            )));
        }
        if let Some(k) = self
            .shift_offset
            .keys()
            .find(|k| !self.descriptor_means.contains_key(*k))
        {
            return Err(Error::InvalidSpec(format!(
                "shift on unknown descriptor `{k}`"
            )));
        }
        if self.latent_noise.is_nan() || self.latent_noise < 0.0 {
            return Err(Error::InvalidSpec(
                "latent_noise must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Tasks plus the hidden latent vector of each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Population {
    pub tasks: TaskSet,
    latents: BTreeMap<String, Vec<f64>>,
}

impl Population {
    pub fn latent(&self, task_id: &str) -> Option<&[f64]> {
        self.latents.get(task_id).map(Vec::as_slice)
    }

    pub fn merged(&self, other: &Population) -> Result<Population> {
        let tasks = self.tasks.merged(&other.tasks)?;
        let mut latents = self.latents.clone();
        latents.extend(other.latents.clone());
        Ok(Population { tasks, latents })
    }

    /// Builds a population from explicit latent vectors, for tests and
    /// hand-made scenarios.
    pub fn from_latents(entries: impl IntoIterator<Item = (Task, Vec<f64>)>) -> Result<Population> {
        let mut pop = Population::default();
        for (task, z) in entries {
            pop.latents.insert(task.id.clone(), z);
            pop.tasks.push(task)?;
        }
        Ok(pop)
    }
}

fn latent_map(latent_seed: u64, latent_dim: usize, n_desc: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(latent_seed);
    let scale = 1.0 / (n_desc.max(1) as f64).sqrt();
    (0..latent_dim)
        .map(|_| {
            (0..n_desc)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    g * scale
                })
                .collect()
        })
        .collect()
}

pub fn generate_population(spec: &PopulationSpec) -> Result<Population> {
    spec.validate()?;
    let keys: Vec<&String> = spec.descriptor_means.keys().collect();
    let w = latent_map(spec.latent_seed, spec.latent_dim, keys.len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pop = Population::default();
    for i in 0..spec.n_tasks {
        let id = format!("{}{:03}", spec.id_prefix, i);
        let mut task = Task::new(&id, &spec.source_tag);
        let mut centred = Vec::with_capacity(keys.len());
        for key in &keys {
            let mean = spec.descriptor_means[*key];
            let sd = spec.descriptor_stdevs[*key];
            let shift = spec.shift_offset.get(*key).copied().unwrap_or(0.0);
            let g: f64 = StandardNormal.sample(&mut rng);
            let mut v = mean + shift + sd * g;
            if key.ends_with(LOG10_SUFFIX) {
                v = v.max(0.0);
            }
            centred.push(v - mean);
            task.descriptors.insert((*key).clone(), v);
        }
        let z: Vec<f64> = w
            .iter()
            .map(|row| {
                let eta: f64 = StandardNormal.sample(&mut rng);
                row.iter().zip(&centred).map(|(a, b)| a * b).sum::<f64>() + spec.latent_noise * eta
            })
            .collect();
        pop.latents.insert(id, z);
        pop.tasks.push(task)?;
    }
    Ok(pop)
}

/// Affine map from a latent vector to the best hyperparameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpOptimumMap {
    pub bias: Vec<f64>,
    /// `hp_dim` rows of `latent_dim` weights.
    pub weights: Vec<Vec<f64>>,
}

impl HpOptimumMap {
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.bias
            .iter()
            .zip(&self.weights)
            .map(|(b, row)| b + row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetupModel {
    pub setup_id: String,
    pub base_quality: f64,
    pub effect_vector: Vec<f64>,
    pub effect_scale: f64,
    pub hp_optimum_map: HpOptimumMap,
    pub bowl_curvature: f64,
    pub noise_std: f64,
}

impl SetupModel {
    /// Random effect vector and optimum map drawn from `rng`.
    pub fn sample(
        setup_id: impl Into<String>,
        latent_dim: usize,
        hp_dim: usize,
        rng: &mut impl Rng,
    ) -> SetupModel {
        let mut normal = || -> f64 { StandardNormal.sample(rng) };
        let effect_vector: Vec<f64> = (0..latent_dim).map(|_| normal()).collect();
        let bias = (0..hp_dim).map(|_| 0.5 + 0.1 * normal()).collect();
        let weights = (0..hp_dim)
            .map(|_| (0..latent_dim).map(|_| 0.15 * normal()).collect())
            .collect();
        SetupModel {
            setup_id: setup_id.into(),
            base_quality: 0.5,
            effect_vector,
            effect_scale: 0.1,
            hp_optimum_map: HpOptimumMap { bias, weights },
            bowl_curvature: 0.1,
            noise_std: 0.01,
        }
    }

    fn validate(&self, latent_dim: usize, hp_dim: usize) -> Result<()> {
        let bad = |m: String| {
            Err(Error::InvalidSpec(format!(
                "setup `{}`: {m}",
                self.setup_id
            )))
        };
        if self.noise_std.is_nan() || self.noise_std <= 0.0 {
            return bad("noise_std must be positive".into());
        }
        if self.effect_vector.len() != latent_dim {
            return bad(format!(
                "effect vector has length {}, expected {latent_dim}",
                self.effect_vector.len()
            ));
        }
        let m = &self.hp_optimum_map;
        if m.bias.len() != hp_dim
            || m.weights.len() != hp_dim
            || m.weights.iter().any(|r| r.len() != latent_dim)
        {
            return bad(format!("optimum map must be {hp_dim} x {latent_dim}"));
        }
        Ok(())
    }

    /// Quality before noise and clamping.
    pub fn mean_quality(&self, z: &[f64], h: &[f64]) -> f64 {
        let proj: f64 = z.iter().zip(&self.effect_vector).map(|(a, b)| a * b).sum();
        let opt = self.hp_optimum_map.apply(z);
        let bowl: f64 = h.iter().zip(&opt).map(|(a, b)| (a - b) * (a - b)).sum();
        self.base_quality + self.effect_scale * proj.tanh() - self.bowl_curvature * bowl
    }
}

pub fn simulate_runs(
    population: &Population,
    setups: &[SetupModel],
    runs_per: usize,
    hp_dim: usize,
    seed: u64,
) -> Result<RunStore> {
    if runs_per == 0 {
        return Err(Error::InvalidSpec("runs_per must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = RunStore::new();
    for task in &population.tasks {
        let z = population.latent(&task.id).ok_or_else(|| {
            Error::InvalidSpec(format!("task `{}` has no latent vector", task.id))
        })?;
        for setup in setups {
            setup.validate(z.len(), hp_dim)?;
            let noise =
                Normal::new(0.0, setup.noise_std).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            for run in 0..runs_per {
                let h: Vec<f64> = (0..hp_dim).map(|_| rng.random::<f64>()).collect();
                let q = (setup.mean_quality(z, &h) + noise.sample(&mut rng)).clamp(0.0, 1.0);
                store.insert(RunRecord {
                    task_id: task.id.clone(),
                    setup_id: setup.setup_id.clone(),
                    run_index: run as u32,
                    hyperparams: h,
                    quality: q,
                })?;
            }
        }
    }
    Ok(store)
}

pub const DEFAULT_SETUP: &str = "default";
pub const ALWAYS_BETTER_SETUP: &str = "compute_5x";

/// A dev population, a shifted prod-like population, a family of setups,
/// and their runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub dev_tasks: usize,
    pub prod_tasks: usize,
    pub dev_tag: String,
    pub prod_tag: String,
    pub descriptor_means: BTreeMap<String, f64>,
    pub descriptor_stdevs: BTreeMap<String, f64>,
    pub shift_offset: BTreeMap<String, f64>,
    pub latent_dim: usize,
    pub latent_noise: f64,
    pub hp_dim: usize,
    pub runs_per: usize,
    /// Setups with randomly drawn effects; the first is the baseline.
    pub setup_ids: Vec<String>,
    pub effect_scale: f64,
    pub bowl_curvature: f64,
    pub noise_std: f64,
    /// Setups built as the baseline with its effect vector pushed along the
    /// latent image of the descriptor shift, so their benefit differs between
    /// dev and prod tasks.
    pub shift_aligned_setups: Vec<String>,
    /// Quality gap of the always-better setup; `None` leaves it out.
    pub always_better_gap: Option<f64>,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        let map = |pairs: &[(&str, f64)]| -> BTreeMap<String, f64> {
            pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
        };
        BenchmarkSpec {
            dev_tasks: 12,
            prod_tasks: 18,
            dev_tag: "dev".into(),
            prod_tag: "prod".into(),
            descriptor_means: map(&[
                ("datapoints_log10", 3.5),
                ("features_log10", 1.5),
                ("class_balance", 0.5),
            ]),
            descriptor_stdevs: map(&[
                ("datapoints_log10", 0.8),
                ("features_log10", 0.5),
                ("class_balance", 0.15),
            ]),
            shift_offset: map(&[("datapoints_log10", 2.0)]),
            latent_dim: 2,
            latent_noise: 0.1,
            hp_dim: 2,
            runs_per: 20,
            setup_ids: vec![
                DEFAULT_SETUP.into(),
                "dnn_only".into(),
                "transfer_learning".into(),
                "new_impl".into(),
            ],
            effect_scale: 0.03,
            bowl_curvature: 0.1,
            noise_std: 0.01,
            shift_aligned_setups: vec!["dnn_only".into()],
            always_better_gap: Some(0.4),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub population: Population,
    pub setups: Vec<SetupModel>,
    pub store: RunStore,
}

impl Benchmark {
    pub fn tasks(&self) -> &TaskSet {
        &self.population.tasks
    }

    pub fn setup_ids(&self) -> Vec<String> {
        self.setups.iter().map(|s| s.setup_id.clone()).collect()
    }

    /// The change from the baseline setup (the first one) to `modified`.
    pub fn change(&self, modified: &str) -> Change {
        Change::new(&self.setups[0].setup_id, modified)
    }
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    crate::filter_eval::partition_seed(seed, stream as usize)
}

impl BenchmarkSpec {
    pub fn without_shift(mut self) -> Self {
        self.shift_offset.clear();
        self
    }

    fn population_spec(&self, n: usize, tag: &str, shift: bool, stream: u64) -> PopulationSpec {
        PopulationSpec {
            n_tasks: n,
            descriptor_means: self.descriptor_means.clone(),
            descriptor_stdevs: self.descriptor_stdevs.clone(),
            latent_dim: self.latent_dim,
            shift_offset: if shift {
                self.shift_offset.clone()
            } else {
                BTreeMap::new()
            },
            source_tag: tag.to_string(),
            id_prefix: format!("{tag}_"),
            seed: sub_seed(self.seed, stream),
            latent_seed: sub_seed(self.seed, 0),
            latent_noise: self.latent_noise,
        }
    }

    /// Unit vector along `W * (shift / stdev)`, or along the first latent
    /// axis when there is no shift.
    fn shift_direction(&self) -> Vec<f64> {
        let w = latent_map(
            sub_seed(self.seed, 0),
            self.latent_dim,
            self.descriptor_means.len(),
        );
        let s: Vec<f64> = self
            .descriptor_means
            .keys()
            .map(|k| self.shift_offset.get(k).copied().unwrap_or(0.0))
            .collect();
        let mut d: Vec<f64> = w
            .iter()
            .map(|row| row.iter().zip(&s).map(|(a, b)| a * b).sum())
            .collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            d.iter_mut().for_each(|v| *v /= norm);
        } else {
            d = (0..self.latent_dim)
                .map(|i| if i == 0 { 1.0 } else { 0.0 })
                .collect();
        }
        d
    }

    pub fn build(&self) -> Result<Benchmark> {
        if self.setup_ids.is_empty() {
            return Err(Error::InvalidSpec("at least one setup is required".into()));
        }
        let dev =
            generate_population(&self.population_spec(self.dev_tasks, &self.dev_tag, false, 1))?;
        let prod =
            generate_population(&self.population_spec(self.prod_tasks, &self.prod_tag, true, 2))?;
        let population = dev.merged(&prod)?;

        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.seed, 3));
        let mut setups: Vec<SetupModel> = self
            .setup_ids
            .iter()
            .map(|id| SetupModel {
                effect_scale: self.effect_scale,
                bowl_curvature: self.bowl_curvature,
                noise_std: self.noise_std,
                ..SetupModel::sample(id, self.latent_dim, self.hp_dim, &mut rng)
            })
            .collect();
        // An aligned setup is the baseline with its effect vector pushed along
        // the shift direction, so the sign of its gain over the baseline is
        // the sign of the task's latent projection on that direction.
        let direction = self.shift_direction();
        let baseline = setups[0].clone();
        for setup in setups.iter_mut().skip(1) {
            if self.shift_aligned_setups.contains(&setup.setup_id) {
                let norm = setup
                    .effect_vector
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                *setup = SetupModel {
                    setup_id: setup.setup_id.clone(),
                    effect_vector: baseline
                        .effect_vector
                        .iter()
                        .zip(&direction)
                        .map(|(e, d)| e + d * norm)
                        .collect(),
                    ..baseline.clone()
                };
            }
        }
        if let Some(gap) = self.always_better_gap {
            setups.push(SetupModel {
                setup_id: ALWAYS_BETTER_SETUP.into(),
                base_quality: setups[0].base_quality + gap,
                ..setups[0].clone()
            });
        }
        let store = simulate_runs(
            &population,
            &setups,
            self.runs_per,
            self.hp_dim,
            sub_seed(self.seed, 4),
        )?;
        Ok(Benchmark {
            population,
            setups,
            store,
        })
    }
}
