use hts_cluster::cluster::{cluster_hts, ClusterConfig};
use hts_cluster::forecast::{
    coherent_projection, combine_forecasts, forecast_per_series, forecast_with_clusters,
    fuzzy_weights, history_dataset, mase_per_level, splits, ArDrift,
};
use hts_cluster::hts::Hierarchy;
use hts_cluster::synth::{generate_benchmark, SynthConfig};
use proptest::prelude::*;

proptest! {
    #[test]
    fn fuzzy_weights_lie_on_the_simplex(
        d in prop::collection::vec(0.0f64..100.0, 1..8),
        m in 1.05f64..5.0,
    ) {
        let w = fuzzy_weights(&d, m);
        prop_assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Closer means weigh at least as much.
        for i in 0..d.len() {
            for j in 0..d.len() {
                if d[i] < d[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }

    #[test]
    fn combination_stays_within_the_envelope(
        f in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 1..5),
        d in prop::collection::vec(0.1f64..10.0, 5),
    ) {
        let w = fuzzy_weights(&d[..f.len()], 2.0);
        let out = combine_forecasts(&w, &f, 4).unwrap();
        for t in 0..4 {
            let lo = f.iter().map(|v| v[t]).fold(f64::INFINITY, f64::min);
            let hi = f.iter().map(|v| v[t]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out[t] >= lo - 1e-9 && out[t] <= hi + 1e-9);
        }
    }

    #[test]
    fn projection_is_exactly_bottom_up(
        branching in prop::collection::vec(1usize..4, 1..3),
        seed in 0u64..1000,
    ) {
        let h = Hierarchy::balanced(&branching).unwrap();
        let fc: Vec<Vec<f64>> = (0..h.node_count())
            .map(|i| (0..3).map(|t| ((seed + 7 * i as u64 + t) % 17) as f64 * 0.37 - 2.0).collect())
            .collect();
        let out = coherent_projection(&fc, &h).unwrap();
        for node in h.bottom_nodes() {
            prop_assert_eq!(&out[node], &fc[node]);
        }
        for t in 0..3 {
            let bottom: Vec<f64> = h.bottom_nodes().map(|b| fc[b][t]).collect();
            for (node, row) in out.iter().enumerate() {
                prop_assert_eq!(row[t], h.aggregate(&bottom)[node]);
            }
        }
    }
}

#[test]
fn singleton_clusters_reproduce_per_series_forecasts() {
    let b = generate_benchmark(&SynthConfig {
        instances_per_cluster: 1,
        length_range: (30, 40),
        offsets: vec![0.0, 10.0],
        branching: vec![2],
        seed: 3,
        ..SynthConfig::two_level()
    })
    .unwrap();
    let history = history_dataset(&b.dataset).unwrap();
    let horizons: Vec<usize> = splits(&b.dataset).iter().map(|s| s.horizon()).collect();
    let k: Vec<usize> = (1..=history.levels())
        .map(|l| history.level_count(l))
        .collect();
    let cfg = ClusterConfig {
        postprocess: None,
        ..ClusterConfig::with_k(k)
    };
    let model = cluster_hts(&history, &cfg).unwrap();
    let f = ArDrift::factory();
    let clustered =
        forecast_with_clusters(&history, &model, &f, &horizons, 2.0, &cfg.sdtw).unwrap();
    let per_series = forecast_per_series(&history, &f, &horizons, 0).unwrap();
    assert_eq!(clustered.fits, per_series.fits);
    assert_eq!(clustered.forecasts, per_series.forecasts);
    assert_eq!(
        mase_per_level(&b.dataset, &history, &clustered.forecasts).unwrap(),
        mase_per_level(&b.dataset, &history, &per_series.forecasts).unwrap()
    );
}

#[test]
fn cluster_forecasts_need_far_fewer_fits() {
    let b = generate_benchmark(&SynthConfig {
        instances_per_cluster: 3,
        length_range: (40, 60),
        seed: 4,
        ..SynthConfig::two_level()
    })
    .unwrap();
    let history = history_dataset(&b.dataset).unwrap();
    let horizons: Vec<usize> = splits(&b.dataset).iter().map(|s| s.horizon()).collect();
    let cfg = ClusterConfig::with_k(vec![4, 4]);
    let model = cluster_hts(&history, &cfg).unwrap();
    let f = ArDrift::factory();
    let run = forecast_with_clusters(&history, &model, &f, &horizons, 2.0, &cfg.sdtw).unwrap();
    assert_eq!(run.fits, model.levels.iter().map(|l| l.k).sum::<usize>());
    assert!(run.fits * 4 <= 12 * 5);
    for (fc, h) in run.forecasts.iter().zip(&horizons) {
        assert!(fc.iter().all(|row| row.len() == *h));
    }
}
