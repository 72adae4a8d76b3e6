use hts_cluster::cluster::*;
use hts_cluster::hts::{Hierarchy, HtsDataset, HtsInstance};
use hts_cluster::metrics::ari;
use hts_cluster::sdtw::{sdtw_mean, SdtwConfig};
use hts_cluster::synth::{generate_benchmark, Benchmark, SynthConfig};

const SLACK: f64 = 1e-10;

fn small(branching: Vec<usize>, offsets: Vec<f64>, per: usize, seed: u64) -> Benchmark {
    let cfg = SynthConfig {
        offsets,
        instances_per_cluster: per,
        length_range: (6, 10),
        branching,
        noise_std: 1.0,
        seed,
    };
    generate_benchmark(&cfg).unwrap()
}

fn fast_cfg(k: Vec<usize>, seed: u64) -> ClusterConfig {
    let mut cfg = ClusterConfig {
        seed,
        ..ClusterConfig::with_k(k)
    };
    cfg.mean.max_iter = 40;
    cfg.barycenter.mean.max_iter = 40;
    cfg
}

fn assert_monotone(trace: &[f64]) {
    for w in trace.windows(2) {
        assert!(w[1] <= w[0] + SLACK, "trace increases: {trace:?}");
    }
}

fn check_traces(m: &LevelClusterModel) {
    assert_monotone(&m.loss_trace);
    for t in &m.prior_traces {
        assert_monotone(t);
    }
}

fn constant_dataset(levels: &[f64], len: usize) -> HtsDataset {
    let insts = levels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            HtsInstance::from_bottom(
                format!("i{i}"),
                Hierarchy::star(1).unwrap(),
                vec![vec![c; len]],
            )
            .unwrap()
        })
        .collect();
    HtsDataset::new(insts).unwrap()
}

#[test]
fn multilevel_traces_are_monotone_and_match_recomputation() {
    for seed in 0..4 {
        let b = small(vec![2, 2, 2], vec![0.0, 3.0, 6.0], 2, seed);
        let cfg = fast_cfg(vec![2, 3, 3, 3], seed);
        let m = cluster_hts(&b.dataset, &cfg).unwrap();
        let obj = objective_value(&b.dataset, &m).unwrap();
        for l in 1..=4 {
            let lm = m.level(l);
            check_traces(lm);
            let last = *lm.loss_trace.last().unwrap();
            assert!(
                (obj.per_level[l - 1] - last).abs() <= 1e-8 * last.abs().max(1.0),
                "level {l}: {} vs {last}",
                obj.per_level[l - 1]
            );
            assert_eq!(lm.assignments.len(), b.dataset.level_count(l));
            assert!(lm.cluster_sizes().iter().all(|&s| s > 0));
        }
        let expected: f64 = (1..=4)
            .map(|l| obj.per_level[l - 1] / b.dataset.level_count(l) as f64)
            .sum();
        assert_eq!(obj.total, expected);
    }
}

#[test]
fn lifted_measures_point_at_lower_means() {
    let b = small(vec![2, 3], vec![0.0, 4.0], 3, 5);
    let m = cluster_hts(&b.dataset, &fast_cfg(vec![2, 2, 2], 5)).unwrap();
    for l in 1..3 {
        let lower_k = m.level(l + 1).k;
        for lifted in &m.level(l).lifted {
            assert!(lifted.clusters.iter().all(|&c| c < lower_k));
            assert!((lifted.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(m.level(l).raw_means.len(), m.level(l).k);
    }
}

#[test]
fn bottom_assignment_is_optimal_after_convergence() {
    let b = small(vec![3], vec![0.0, 2.0], 3, 1);
    let cfg = ClusterConfig {
        postprocess: None,
        ..fast_cfg(vec![2, 3], 1)
    };
    let m = cluster_hts(&b.dataset, &cfg).unwrap();
    assert!(m.level(2).converged);
    let base = objective_value(&b.dataset, &m).unwrap().per_level[1];
    for i in 0..m.level(2).assignments.len() {
        for k in 0..m.level(2).k {
            if k == m.level(2).assignments[i] {
                continue;
            }
            let mut moved = m.clone();
            moved.levels[1].assignments[i] = k;
            // Keep the upper level consistent with the moved label.
            moved.levels[0].barycenters.clear();
            moved.levels[0].raw_means = vec![vec![0.0]; moved.levels[0].k];
            let v = objective_value(&b.dataset, &moved).unwrap().per_level[1];
            assert!(v > base, "moving series {i} to {k}: {v} <= {base}");
        }
    }
}

#[test]
fn same_seed_gives_identical_models() {
    let b = small(vec![2, 2], vec![0.0, 5.0], 2, 3);
    let cfg = fast_cfg(vec![2, 2, 2], 11);
    let a = serde_json::to_string(&cluster_hts(&b.dataset, &cfg).unwrap()).unwrap();
    let c = serde_json::to_string(&cluster_hts(&b.dataset, &cfg).unwrap()).unwrap();
    assert_eq!(a, c);
}

#[test]
fn permuting_instances_only_relabels() {
    let b = small(vec![3], vec![0.0, 10.0, 20.0], 3, 2);
    let cfg = fast_cfg(vec![3, 3], 4);
    let m = cluster_hts(&b.dataset, &cfg).unwrap();
    let mut insts = b.dataset.instances().to_vec();
    insts.reverse();
    let rev = HtsDataset::new(insts).unwrap();
    let r = cluster_hts(&rev, &cfg).unwrap();
    let n = b.dataset.len();
    for (l, per) in [(1usize, 1usize), (2, 3)] {
        let orig = &m.level(l).assignments;
        // Map the reversed run back to the original item order.
        let back: Vec<usize> = (0..n)
            .flat_map(|i| (0..per).map(move |j| (n - 1 - i) * per + j))
            .map(|p| r.level(l).assignments[p])
            .collect();
        assert_eq!(ari(orig, &back).unwrap(), 1.0, "level {l}");
    }
}

#[test]
fn single_cluster_mean_is_mean_of_all() {
    let b = small(vec![2], vec![0.0, 3.0], 2, 0);
    let cfg = ClusterConfig {
        postprocess: None,
        ..fast_cfg(vec![1, 1], 0)
    };
    let m = cluster_bottom_level(&b.dataset, 1, &cfg).unwrap();
    assert!(m.assignments.iter().all(|&z| z == 0));
    let series: Vec<&[f64]> = b
        .dataset
        .level_series(2)
        .unwrap()
        .into_iter()
        .map(|s| s.series.values())
        .collect();
    let mut lengths: Vec<usize> = series.iter().map(|s| s.len()).collect();
    lengths.sort_unstable();
    assert!(lengths.contains(&m.raw_means[0].len()));
    let trace = &m.loss_trace;
    assert!(trace.last().unwrap() < trace.first().unwrap());
    // The mean objective is the member average of the cluster loss.
    let again = sdtw_mean(&series, &m.raw_means[0], &cfg.sdtw, &cfg.mean).unwrap();
    let avg = trace.last().unwrap() / series.len() as f64;
    assert!((again.history[0] - avg).abs() <= 1e-9 * avg.max(1.0));
    assert!(again.objective <= avg);
}

#[test]
fn one_cluster_per_series_has_zero_loss() {
    let ds = constant_dataset(&[0.0, 1.0, 5.0, 9.0], 4);
    let cfg = ClusterConfig {
        postprocess: None,
        ..fast_cfg(vec![4, 4], 0)
    };
    let m = cluster_bottom_level(&ds, 4, &cfg).unwrap();
    assert_eq!(*m.loss_trace.last().unwrap(), 0.0);
    let mut labels = m.assignments.clone();
    labels.sort_unstable();
    assert_eq!(labels, vec![0, 1, 2, 3]);
}

#[test]
fn two_groups_of_constants_are_separated() {
    let ds = constant_dataset(&[0.0, 0.1, 0.2, 100.0, 100.1, 99.9, 0.05], 5);
    let m = cluster_bottom_level(&ds, 2, &fast_cfg(vec![2, 2], 7)).unwrap();
    assert_eq!(ari(&m.assignments, &[0, 0, 0, 1, 1, 1, 0]).unwrap(), 1.0);
}

#[test]
fn degenerate_chain_has_one_cluster_per_level() {
    let h = Hierarchy::balanced(&[1, 1]).unwrap();
    let inst = HtsInstance::from_bottom("only", h, vec![vec![1.0, 2.0, 4.0]]).unwrap();
    let ds = HtsDataset::new(vec![inst]).unwrap();
    // The default removal threshold would delete the only cluster.
    let cfg = ClusterConfig {
        postprocess: None,
        ..fast_cfg(vec![1, 1, 1], 0)
    };
    let m = cluster_hts(&ds, &cfg).unwrap();
    for l in 1..=3 {
        assert_eq!(m.level(l).k, 1);
        assert_eq!(*m.level(l).loss_trace.last().unwrap(), 0.0);
    }
    assert_eq!(objective_value(&ds, &m).unwrap().total, 0.0);
}

fn series_model(means: Vec<Vec<f64>>, assignments: Vec<usize>) -> LevelClusterModel {
    LevelClusterModel {
        level: 2,
        k: means.len(),
        members: (0..assignments.len()).map(|i| i.to_string()).collect(),
        assignments,
        raw_means: means,
        barycenters: Vec::new(),
        lifted: Vec::new(),
        loss_trace: Vec::new(),
        prior_traces: Vec::new(),
        iterations: 0,
        converged: true,
        reseeds: 0,
    }
}

#[test]
fn identical_means_are_merged() {
    let data: Vec<Vec<f64>> = vec![vec![5.0; 3], vec![5.5; 3], vec![4.5; 3], vec![5.0; 3]];
    let series: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    let model = series_model(vec![vec![5.0; 3], vec![5.0; 3]], vec![0, 0, 1, 1]);
    let pp = PostprocessConfig {
        merge_eps: MergeEps::Value(1e-9),
        remove_eps: 0,
    };
    let (out, report) =
        merge_remove_series(&series, &model, &pp, &fast_cfg(vec![1, 2], 0)).unwrap();
    assert_eq!((report.merged, report.removed), (1, 0));
    assert_eq!(out.k, 1);
    assert!(out.assignments.iter().all(|&z| z == 0));
}

#[test]
fn zero_thresholds_leave_model_unchanged() {
    let data: Vec<Vec<f64>> = vec![vec![0.0; 3], vec![10.0; 3], vec![10.0; 3]];
    let series: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    let model = series_model(
        vec![vec![0.0; 3], vec![10.0; 3], vec![10.0; 3]],
        vec![0, 1, 2],
    );
    let pp = PostprocessConfig {
        merge_eps: MergeEps::Value(0.0),
        remove_eps: 0,
    };
    let (out, report) =
        merge_remove_series(&series, &model, &pp, &fast_cfg(vec![1, 3], 0)).unwrap();
    assert_eq!(report, PostprocessReport::default());
    assert_eq!((out.k, out.assignments), (3, vec![0, 1, 2]));
    assert_eq!(out.raw_means, model.raw_means);
}

#[test]
fn small_cluster_is_removed_and_orphan_reassigned() {
    let levels = [0.0, 0.2, 10.0, 10.2, 20.0, 20.2, 30.0, 30.2, 38.0];
    let data: Vec<Vec<f64>> = levels.iter().map(|&c| vec![c; 4]).collect();
    let series: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    let means = [0.1, 10.1, 20.1, 30.1, 38.0]
        .iter()
        .map(|&c| vec![c; 4])
        .collect();
    let model = series_model(means, vec![0, 0, 1, 1, 2, 2, 3, 3, 4]);
    let pp = PostprocessConfig {
        merge_eps: MergeEps::Value(0.0),
        remove_eps: 1,
    };
    let (out, report) =
        merge_remove_series(&series, &model, &pp, &fast_cfg(vec![1, 5], 0)).unwrap();
    assert_eq!((report.merged, report.removed), (0, 1));
    assert_eq!(out.k, 4);
    assert_eq!(out.assignments[8], out.assignments[7]);
    check_traces(&out);
}

#[test]
fn removing_everything_is_an_error() {
    let data: Vec<Vec<f64>> = vec![vec![0.0; 3], vec![10.0; 3]];
    let series: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    let model = series_model(vec![vec![0.0; 3], vec![10.0; 3]], vec![0, 1]);
    let pp = PostprocessConfig {
        merge_eps: MergeEps::Value(0.0),
        remove_eps: 5,
    };
    let err = merge_remove_series(&series, &model, &pp, &fast_cfg(vec![1, 2], 0)).unwrap_err();
    assert!(matches!(err, ClusterError::TooAggressive));
}

#[test]
fn identical_measures_collapse_to_one_cluster() {
    let lower = vec![vec![0.0, 1.0, 2.0], vec![5.0, 5.0, 5.0]];
    let lifted = vec![
        LiftedMeasure {
            clusters: vec![0, 1],
            weights: vec![0.5, 0.5]
        };
        5
    ];
    let cfg = fast_cfg(vec![3, 2], 0);
    let (m, _) = cluster_aggregated_level(&lifted, &lower, 1, 3, 2, &cfg).unwrap();
    assert_eq!(m.k, 1);
    assert_eq!(*m.loss_trace.last().unwrap(), 0.0);
}

#[test]
fn far_point_masses_split_perfectly() {
    let lower = vec![vec![0.0; 4], vec![50.0; 4]];
    let truth = [0, 1, 1, 0, 1, 0, 0];
    let lifted: Vec<LiftedMeasure> = truth
        .iter()
        .map(|&t| LiftedMeasure {
            clusters: vec![t],
            weights: vec![1.0],
        })
        .collect();
    let cfg = ClusterConfig {
        postprocess: None,
        ..fast_cfg(vec![2, 2], 3)
    };
    let (m, bary) = cluster_aggregated_level(&lifted, &lower, 1, 2, 1, &cfg).unwrap();
    assert_eq!(ari(&m.assignments, &truth).unwrap(), 1.0);
    assert_eq!(bary.len(), 2);
    assert_eq!(*m.loss_trace.last().unwrap(), 0.0);
}

#[test]
fn refined_means_of_trivial_clusters() {
    let ds = constant_dataset(&[3.0, 3.0, 3.0, 8.0], 4);
    let cfg = fast_cfg(vec![2, 2], 0);
    let means = refine_level_means(&ds, 2, &[0, 0, 0, 1], 2, &cfg).unwrap();
    assert_eq!(means[0], vec![3.0; 4]);
    assert_eq!(means[1], vec![8.0; 4]);
}

#[test]
fn two_level_alternation_recovers_clusters() {
    let b = small(vec![3], vec![0.0, 10.0, 20.0], 4, 9);
    let cfg = fast_cfg(vec![3, 3], 9);
    let m = two_level_alternating(&b.dataset, 3, 3, &cfg).unwrap();
    assert_eq!(m.mode, ClusterMode::TwoLevelAlt);
    assert!(ari(&m.level(1).assignments, &b.labels.per_level[0]).unwrap() >= 0.9);
    assert!(ari(&m.level(2).assignments, &b.labels.per_level[1]).unwrap() >= 0.9);
    check_traces(m.level(1));
    check_traces(m.level(2));
    let obj = objective_value(&b.dataset, &m).unwrap();
    let last = *m.level(2).loss_trace.last().unwrap();
    assert!((obj.per_level[1] - last).abs() <= 1e-8 * last.max(1.0));
}

#[test]
fn two_level_trivial_k_stops_after_one_iteration() {
    let b = small(vec![2], vec![0.0, 10.0], 2, 0);
    let m = two_level_alternating(&b.dataset, 1, 1, &fast_cfg(vec![1, 1], 0)).unwrap();
    assert_eq!(m.level(1).iterations, 1);
    assert_eq!((m.level(1).k, m.level(2).k), (1, 1));
}

#[test]
fn two_level_requires_two_levels() {
    let b = small(vec![2, 2], vec![0.0], 2, 0);
    assert!(matches!(
        two_level_alternating(&b.dataset, 1, 1, &fast_cfg(vec![1, 1, 1], 0)),
        Err(ClusterError::InvalidConfig(_))
    ));
}

#[test]
fn levelwise_baseline_clusters_every_level() {
    let b = small(vec![2], vec![0.0, 20.0], 3, 4);
    let m = cluster_levelwise_independent(&b.dataset, &fast_cfg(vec![2, 2], 4)).unwrap();
    assert_eq!(m.mode, ClusterMode::Levelwise);
    for l in 1..=2 {
        assert!(m.level(l).barycenters.is_empty());
        assert!(ari(&m.level(l).assignments, &b.labels.per_level[l - 1]).unwrap() >= 0.9);
        check_traces(m.level(l));
    }
    let obj = objective_value(&b.dataset, &m).unwrap();
    let last = *m.level(1).loss_trace.last().unwrap();
    assert!((obj.per_level[0] - last).abs() <= 1e-8 * last.max(1.0));
}

#[test]
fn div_with_gamma_uses_config() {
    let ds = constant_dataset(&[0.0, 1.0, 2.0, 3.0], 3);
    let cfg = ClusterConfig {
        sdtw: SdtwConfig {
            gamma: 0.1,
            band: None,
        },
        ..fast_cfg(vec![1, 2], 0)
    };
    let m = cluster_bottom_level(&ds, 2, &cfg).unwrap();
    assert_eq!(m.k, 2);
}
