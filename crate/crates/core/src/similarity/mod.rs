//! Similarity between train tasks and a single holdout task.
//!
//! Three metrics are provided, in increasing order of how much they need to
//! know about the holdout task:
//!
//! * [`descriptor_similarity`] uses task descriptors only.
//! * [`performance_descriptor_similarity`] also uses the holdout's past runs
//!   under the baseline setup, comparing them to per-train-task surrogates.
//! * [`oracle_similarity`] correlates qualities across several setups and so
//!   needs holdout runs that a restricted task would never expose.
//!
//! Higher values always mean "more similar".

mod correlation;
mod surrogate;

pub use correlation::{average_ranks, pearson, spearman, CorrelationKind};
pub use surrogate::{Surrogate, SurrogateParams};

use crate::error::{Error, Result};
use crate::task_model::{RunStore, Task, TaskSet};

/// Added to descriptor distances before inversion.
pub const DISTANCE_OFFSET: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityVector {
    pub metric_name: String,
    /// `(task_id, similarity)` in train-set order.
    pub values: Vec<(String, f64)>,
}

impl SimilarityVector {
    pub fn get(&self, task_id: &str) -> Option<f64> {
        self.values
            .iter()
            .find(|(id, _)| id == task_id)
            .map(|(_, v)| *v)
    }

    /// Task ids by descending similarity, ties by ascending id.
    pub fn ranking(&self) -> Vec<&str> {
        let mut order: Vec<&(String, f64)> = self.values.iter().collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        order.into_iter().map(|(id, _)| id.as_str()).collect()
    }
}

/// Inverse euclidean distance between z-scored descriptor vectors.
///
/// Each key is standardised over the train tasks plus the holdout. Keys with
/// zero variance contribute nothing to the distance.
pub fn descriptor_similarity(
    train: &TaskSet,
    holdout: &Task,
    keys: &[String],
) -> Result<SimilarityVector> {
    if keys.is_empty() {
        return Err(Error::InvalidSpec(
            "descriptor similarity needs at least one key".into(),
        ));
    }
    let mut dist2 = vec![0.0; train.len()];
    for key in keys {
        let h = holdout.descriptor(key)?;
        let col = train
            .iter()
            .map(|t| t.descriptor(key))
            .collect::<Result<Vec<_>>>()?;
        let n = (col.len() + 1) as f64;
        let mean = (col.iter().sum::<f64>() + h) / n;
        let var = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() + (h - mean).powi(2)) / n;
        if var == 0.0 {
            continue;
        }
        let sd = var.sqrt();
        let hz = (h - mean) / sd;
        for (acc, v) in dist2.iter_mut().zip(&col) {
            *acc += ((v - mean) / sd - hz).powi(2);
        }
    }
    Ok(SimilarityVector {
        metric_name: "descriptor".into(),
        values: train
            .iter()
            .zip(dist2)
            .map(|(t, d2)| (t.id.clone(), 1.0 / (d2.sqrt() + DISTANCE_OFFSET)))
            .collect(),
    })
}

/// Correlation between the holdout's observed baseline qualities and each
/// train task's surrogate predictions at the same configurations.
pub fn performance_descriptor_similarity(
    train: &TaskSet,
    holdout_id: &str,
    baseline_setup: &str,
    store: &RunStore,
    corr: CorrelationKind,
    params: SurrogateParams,
) -> Result<SimilarityVector> {
    let holdout_runs = match store.runs(holdout_id, baseline_setup) {
        Ok(r) => r,
        Err(Error::NoRuns { .. }) => &[],
        Err(e) => return Err(e),
    };
    if holdout_runs.len() < 3 {
        return Err(Error::InsufficientHoldoutRuns {
            task: holdout_id.to_string(),
            found: holdout_runs.len(),
        });
    }
    let actual: Vec<f64> = holdout_runs.iter().map(|r| r.quality).collect();

    let mut values = Vec::with_capacity(train.len());
    for task in train {
        let points = store
            .runs(&task.id, baseline_setup)?
            .iter()
            .map(|r| (r.hyperparams.clone(), r.quality))
            .collect();
        let surrogate = Surrogate::fit(points, params)?;
        let predicted: Vec<f64> = holdout_runs
            .iter()
            .map(|r| surrogate.predict(&r.hyperparams))
            .collect();
        values.push((task.id.clone(), corr.compute(&predicted, &actual)?));
    }
    Ok(SimilarityVector {
        metric_name: format!("performance_{}", corr.as_str()),
        values,
    })
}

/// Correlation of per-setup mean qualities between each train task and the
/// holdout task.
pub fn oracle_similarity<S: AsRef<str>>(
    train: &TaskSet,
    holdout_id: &str,
    setups: &[S],
    store: &RunStore,
    corr: CorrelationKind,
) -> Result<SimilarityVector> {
    if setups.len() < 3 {
        return Err(Error::InsufficientSetups(setups.len()));
    }
    let holdout = setups
        .iter()
        .map(|s| store.mean_quality(holdout_id, s.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(train.len());
    for task in train {
        let q = setups
            .iter()
            .map(|s| store.mean_quality(&task.id, s.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        values.push((task.id.clone(), corr.compute(&q, &holdout)?));
    }
    Ok(SimilarityVector {
        metric_name: format!("oracle_{}", corr.as_str()),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task_model::RunRecord;
    use proptest::prelude::*;

    fn keys(k: &[&str]) -> Vec<String> {
        k.iter().map(|s| s.to_string()).collect()
    }

    fn one_d(values: &[(&str, f64)]) -> TaskSet {
        TaskSet::from_tasks(
            values
                .iter()
                .map(|(id, v)| Task::new(*id, "dev").with_descriptor("log10_datapoints", *v)),
        )
        .unwrap()
    }

    #[test]
    fn identical_descriptors_rank_first() {
        let train = one_d(&[("a", 1.0), ("b", 4.0)]);
        let holdout = Task::new("h", "prod").with_descriptor("log10_datapoints", 4.0);
        let s = descriptor_similarity(&train, &holdout, &keys(&["log10_datapoints"])).unwrap();
        assert_eq!(s.get("b").unwrap(), 1.0 / DISTANCE_OFFSET);
        assert_eq!(s.ranking(), vec!["b", "a"]);
    }

    #[test]
    fn hand_computed_z_distances() {
        let train = one_d(&[("t3", 3.0), ("t45", 4.5), ("t6", 6.0)]);
        let holdout = Task::new("h", "prod").with_descriptor("log10_datapoints", 4.0);
        let s = descriptor_similarity(&train, &holdout, &keys(&["log10_datapoints"])).unwrap();
        // Population {3, 4.5, 6, 4}: mean 4.375, variance 1.171875.
        let sd = 1.171875f64.sqrt();
        for (id, raw) in [("t3", 1.0), ("t45", 0.5), ("t6", 2.0)] {
            let expected = 1.0 / (raw / sd + DISTANCE_OFFSET);
            assert!((s.get(id).unwrap() - expected).abs() < 1e-12 * expected);
        }
        assert_eq!(s.ranking(), vec!["t45", "t3", "t6"]);
    }

    #[test]
    fn zero_variance_key_is_ignored_and_missing_key_errors() {
        let train = TaskSet::from_tasks([
            Task::new("a", "d")
                .with_descriptor("x", 1.0)
                .with_descriptor("c", 5.0),
            Task::new("b", "d")
                .with_descriptor("x", 3.0)
                .with_descriptor("c", 5.0),
        ])
        .unwrap();
        let h = Task::new("h", "p")
            .with_descriptor("x", 1.0)
            .with_descriptor("c", 5.0);
        let with_const = descriptor_similarity(&train, &h, &keys(&["x", "c"])).unwrap();
        let without = descriptor_similarity(&train, &h, &keys(&["x"])).unwrap();
        assert_eq!(with_const.values, without.values);

        let err = descriptor_similarity(&train, &h, &keys(&["y"])).unwrap_err();
        assert!(matches!(err, Error::MissingDescriptor { key, .. } if key == "y"));
    }

    /// A task id with its quality as a function of the single hyperparameter.
    type Surface<'a> = (&'a str, fn(f64) -> f64);

    fn surface_store(surfaces: &[Surface<'_>]) -> (TaskSet, RunStore) {
        let mut tasks = TaskSet::new();
        let mut store = RunStore::new();
        for (id, f) in surfaces {
            tasks.push(Task::new(*id, "dev")).unwrap();
            for i in 0..9u32 {
                let h = i as f64 / 8.0;
                store
                    .insert(RunRecord {
                        task_id: id.to_string(),
                        setup_id: "base".into(),
                        run_index: i,
                        hyperparams: vec![h],
                        quality: f(h),
                    })
                    .unwrap();
            }
        }
        (tasks, store)
    }

    fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|a| {
                    v.iter().filter(|b| *b < a).count() as f64
                        + (v.iter().filter(|b| *b == a).count() as f64 + 1.0) / 2.0
                })
                .collect()
        };
        let (rx, ry) = (rank(x), rank(y));
        let n = x.len() as f64;
        let (sx, sy): (f64, f64) = (rx.iter().sum(), ry.iter().sum());
        let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| a * b).sum();
        let sxx: f64 = rx.iter().map(|a| a * a).sum();
        let syy: f64 = ry.iter().map(|a| a * a).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn performance_similarity_cases() {
        fn near(h: f64) -> f64 {
            0.9 - (h - 0.2) * (h - 0.2)
        }
        fn far(h: f64) -> f64 {
            0.9 - (h - 0.8) * (h - 0.8)
        }
        fn flat(_: f64) -> f64 {
            0.7
        }
        let (tasks, store) = surface_store(&[
            ("same", near),
            ("anti", far),
            ("flat", flat),
            ("hold", near),
        ]);
        let train = tasks.filter_by(|t| t.id != "hold");
        let s = performance_descriptor_similarity(
            &train,
            "hold",
            "base",
            &store,
            CorrelationKind::Spearman,
            SurrogateParams::default(),
        )
        .unwrap();
        assert_eq!(s.get("same").unwrap(), 1.0);
        assert_eq!(s.get("flat").unwrap(), 0.0);

        let hs: Vec<f64> = (0..9).map(|i| i as f64 / 8.0).collect();
        let surrogate = Surrogate::fit(
            store
                .runs("anti", "base")
                .unwrap()
                .iter()
                .map(|r| (r.hyperparams.clone(), r.quality))
                .collect(),
            SurrogateParams::default(),
        )
        .unwrap();
        let predicted: Vec<f64> = hs.iter().map(|h| surrogate.predict(&[*h])).collect();
        let actual: Vec<f64> = hs.iter().map(|h| near(*h)).collect();
        let oracle = brute_spearman(&predicted, &actual);
        assert!(oracle < 0.0);
        assert!((s.get("anti").unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn performance_similarity_needs_three_holdout_runs() {
        let (tasks, mut store) = surface_store(&[("a", |h| h)]);
        for i in 0..2 {
            store
                .insert(RunRecord {
                    task_id: "h".into(),
                    setup_id: "base".into(),
                    run_index: i,
                    hyperparams: vec![0.5],
                    quality: 0.5,
                })
                .unwrap();
        }
        let err = performance_descriptor_similarity(
            &tasks,
            "h",
            "base",
            &store,
            CorrelationKind::Spearman,
            SurrogateParams::default(),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientHoldoutRuns { found: 2, .. }
        ));
    }

    fn setup_means(rows: &[(&str, [f64; 4])]) -> (TaskSet, RunStore) {
        let mut tasks = TaskSet::new();
        let mut store = RunStore::new();
        for (id, qs) in rows {
            tasks.push(Task::new(*id, "dev")).unwrap();
            for (s, q) in qs.iter().enumerate() {
                store
                    .insert(RunRecord {
                        task_id: id.to_string(),
                        setup_id: format!("s{s}"),
                        run_index: 0,
                        hyperparams: vec![],
                        quality: *q,
                    })
                    .unwrap();
            }
        }
        (tasks, store)
    }

    #[test]
    fn oracle_similarity_cases() {
        let (tasks, store) = setup_means(&[
            ("up", [0.6, 0.7, 0.8, 0.9]),
            ("squash", [0.1, 0.2, 0.25, 0.9]),
            ("hold", [0.9, 0.8, 0.7, 0.6]),
        ]);
        let setups = ["s0", "s1", "s2", "s3"];
        let s =
            oracle_similarity(&tasks, "hold", &setups, &store, CorrelationKind::Spearman).unwrap();
        assert_eq!(s.get("hold").unwrap(), 1.0);
        assert_eq!(s.get("up").unwrap(), -1.0);
        assert!((brute_spearman(&[0.6, 0.7, 0.8, 0.9], &[0.9, 0.8, 0.7, 0.6]) + 1.0).abs() < 1e-12);
        let s =
            oracle_similarity(&tasks, "up", &setups, &store, CorrelationKind::Spearman).unwrap();
        assert_eq!(s.get("squash").unwrap(), 1.0);

        assert!(matches!(
            oracle_similarity(
                &tasks,
                "hold",
                &setups[..2],
                &store,
                CorrelationKind::Spearman
            ),
            Err(Error::InsufficientSetups(2))
        ));
        assert!(matches!(
            oracle_similarity(
                &tasks,
                "hold",
                &["s0", "s1", "zz"],
                &store,
                CorrelationKind::Spearman
            ),
            Err(Error::NoRuns { .. })
        ));
    }

    proptest! {
        #[test]
        fn descriptor_ranking_survives_affine_rescaling(
            vals in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..12),
            h in (-10.0f64..10.0, -10.0f64..10.0),
            scale in 0.1f64..50.0,
            shift in -100.0f64..100.0,
        ) {
            let build = |f: &dyn Fn(f64) -> f64| {
                let train = TaskSet::from_tasks(vals.iter().enumerate().map(|(i, (a, b))| {
                    Task::new(format!("t{i:02}"), "d").with_descriptor("a", f(*a)).with_descriptor("b", *b)
                })).unwrap();
                let hold = Task::new("h", "p").with_descriptor("a", f(h.0)).with_descriptor("b", h.1);
                let s = descriptor_similarity(&train, &hold, &keys(&["a", "b"])).unwrap();
                s.values.iter().map(|(_, v)| 1.0 / v).collect::<Vec<f64>>()
            };
            let d0 = build(&|x| x);
            let d1 = build(&|x| x * scale + shift);
            // Distances agree up to rounding, so any order between clearly
            // separated tasks must be preserved.
            for i in 0..d0.len() {
                for j in 0..d0.len() {
                    if d0[i] + 1e-6 < d0[j] {
                        prop_assert!(d1[i] < d1[j]);
                    }
                }
            }
        }

        #[test]
        fn oracle_self_similarity_is_one(qs in prop::collection::vec(0.0f64..1.0, 4)) {
            prop_assume!(qs.iter().any(|q| *q != qs[0]));
            let arr = [qs[0], qs[1], qs[2], qs[3]];
            let (tasks, store) = setup_means(&[("t", arr)]);
            for corr in [CorrelationKind::Spearman, CorrelationKind::Pearson] {
                let s = oracle_similarity(&tasks, "t", &["s0", "s1", "s2", "s3"], &store, corr).unwrap();
                prop_assert!((s.get("t").unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }
}
