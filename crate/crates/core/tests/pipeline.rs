use taskfilter_core::filter_eval::{eval_filter_on_plan, mean};
use taskfilter_core::filters::{apply_filter, apply_sim_filter};
use taskfilter_core::similarity::{descriptor_similarity, oracle_similarity, spearman};
use taskfilter_core::synth::{Benchmark, BenchmarkSpec};
use taskfilter_core::task_model::{ingest_runs, ingest_tasks, write_runs, write_tasks};
use taskfilter_core::{
    contrast_filters, sample_partitions, CorrelationKind, EvalSettings, FilterContext, FilterKind,
    FilterSpec, PartitionMode,
};

fn bench(shift: bool, seed: u64) -> Benchmark {
    let spec = BenchmarkSpec {
        seed,
        ..Default::default()
    };
    let spec = if shift { spec } else { spec.without_shift() };
    spec.build().unwrap()
}

fn settings(b: &Benchmark) -> EvalSettings {
    EvalSettings {
        oracle_setups: b.setup_ids(),
        ..Default::default()
    }
}

#[test]
fn identical_filters_contrast_to_zero() {
    let b = bench(true, 3);
    let plan = sample_partitions(b.tasks(), &PartitionMode::RandomSplit, 8, 20, 3).unwrap();
    let f = FilterSpec::new(FilterKind::PerformanceSim, 4);
    let c = contrast_filters(
        &f,
        &f,
        &b.change("dnn_only"),
        b.tasks(),
        &plan,
        &b.store,
        &settings(&b),
    )
    .unwrap();
    assert_eq!(c.mean_diff, 0.0);
    assert_eq!(c.p_value, Some(1.0));
    assert!(!c.significant);
}

#[test]
fn all_tasks_beat_a_single_random_task() {
    let b = bench(false, 0);
    let plan = sample_partitions(b.tasks(), &PartitionMode::RandomSplit, 18, 30, 0).unwrap();
    let c = contrast_filters(
        &FilterSpec::all(),
        &FilterSpec::random(1, 0),
        &b.change("dnn_only"),
        b.tasks(),
        &plan,
        &b.store,
        &settings(&b),
    )
    .unwrap();
    assert!(c.mean_diff > 0.0, "{c:?}");
}

#[test]
fn perfect_filter_attains_zero_regret() {
    let b = bench(true, 1);
    let change = b.change("transfer_learning");
    let plan = sample_partitions(b.tasks(), &PartitionMode::RandomSplit, 5, 10, 1).unwrap();
    for part in &plan.partitions {
        let h = b.tasks().subset(&part.holdout).unwrap();
        let (y, t, ll) = taskfilter_core::filter_eval::eval_filtered(
            &h,
            &h,
            &change,
            &b.store,
            Default::default(),
        )
        .unwrap();
        assert_eq!(y, t);
        for dy in [-0.05, -1e-3, 1e-3, 0.05] {
            let other = (y + dy).clamp(1e-6, 1.0 - 1e-6);
            assert!(ll >= taskfilter_core::log_loss(other, t));
        }
    }
}

#[test]
fn descriptor_similarity_tracks_oracle_similarity() {
    let spec = BenchmarkSpec {
        noise_std: 0.002,
        setup_ids: (0..8).map(|i| format!("s{i}")).collect(),
        always_better_gap: None,
        shift_aligned_setups: vec![],
        ..Default::default()
    };
    let b = spec.without_shift().build().unwrap();
    let keys: Vec<String> = b.tasks().tasks()[0].descriptors.keys().cloned().collect();
    let mut corrs = Vec::new();
    for holdout in b.tasks() {
        let train = b.tasks().filter_by(|t| t.id != holdout.id);
        let d = descriptor_similarity(&train, holdout, &keys).unwrap();
        let o = oracle_similarity(
            &train,
            &holdout.id,
            &b.setup_ids(),
            &b.store,
            CorrelationKind::Pearson,
        )
        .unwrap();
        let dv: Vec<f64> = d.values.iter().map(|(_, v)| *v).collect();
        let ov: Vec<f64> = o.values.iter().map(|(_, v)| *v).collect();
        corrs.push(spearman(&dv, &ov).unwrap());
    }
    let m = mean(&corrs);
    assert!(m > 0.0, "mean rank correlation {m}");
}

#[test]
fn files_round_trip_into_the_same_evaluation() {
    let b = bench(true, 5);
    let dir = tempfile::tempdir().unwrap();
    write_tasks(b.tasks(), dir.path().join("tasks.jsonl")).unwrap();
    write_runs(&b.store, dir.path().join("runs.csv")).unwrap();
    let tasks = ingest_tasks(dir.path().join("tasks.jsonl")).unwrap();
    let store = ingest_runs(dir.path().join("runs.csv"), &tasks).unwrap();
    assert_eq!(&tasks, b.tasks());
    assert_eq!(store, b.store);

    let plan = sample_partitions(&tasks, &PartitionMode::RandomSplit, 6, 5, 5).unwrap();
    let f = FilterSpec::descriptor(3, ["datapoints_log10", "features_log10"]);
    let change = b.change("new_impl");
    let from_files =
        eval_filter_on_plan(&f, &tasks, &change, &plan, &store, &settings(&b)).unwrap();
    let in_memory =
        eval_filter_on_plan(&f, b.tasks(), &change, &plan, &b.store, &settings(&b)).unwrap();
    assert_eq!(from_files, in_memory);
}

#[test]
fn voting_over_one_holdout_is_the_plain_filter() {
    let b = bench(true, 2);
    let setups = b.setup_ids();
    let ctx = FilterContext::new(&b.store, "default", &setups);
    let train = b.tasks().filter_by(|t| t.source_tag == "dev");
    for holdout in b.tasks().iter().filter(|t| t.source_tag == "prod") {
        let one = b.tasks().subset(&[holdout.id.as_str()]).unwrap();
        for spec in [
            FilterSpec::descriptor(4, ["datapoints_log10"]),
            FilterSpec::new(FilterKind::OracleSim, 4),
        ] {
            let voted = apply_filter(&spec, &train, &one, &ctx).unwrap();
            let plain = apply_sim_filter(&spec, &train, holdout, &ctx).unwrap();
            let mut a = voted.ids();
            let mut p = plain.ids();
            a.sort_unstable();
            p.sort_unstable();
            assert_eq!(a, p);
        }
    }
}
