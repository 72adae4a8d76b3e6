use hts_cluster::metrics::{ami, ari, contingency, nmi};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn labels(n: usize, k: u8) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0..k, n)
}

fn pair() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (2usize..40).prop_flat_map(|n| (labels(n, 5), labels(n, 4)))
}

proptest! {
    #[test]
    fn indices_are_symmetric((a, b) in pair()) {
        prop_assert!((nmi(&a, &b).unwrap() - nmi(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((ami(&a, &b).unwrap() - ami(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((ari(&a, &b).unwrap() - ari(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn indices_ignore_label_names((a, b) in pair(), shift in 1u8..50) {
        let relabeled: Vec<u8> = a.iter().map(|&l| (l * 7 + shift) % 251).collect();
        prop_assert!((nmi(&a, &b).unwrap() - nmi(&relabeled, &b).unwrap()).abs() < 1e-12);
        prop_assert!((ami(&a, &b).unwrap() - ami(&relabeled, &b).unwrap()).abs() < 1e-12);
        prop_assert!((ari(&a, &b).unwrap() - ari(&relabeled, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn bounds_and_margins((a, b) in pair()) {
        let c = contingency(&a, &b).unwrap();
        prop_assert_eq!(c.row_sums().iter().sum::<u64>(), a.len() as u64);
        prop_assert_eq!(c.col_sums().iter().sum::<u64>(), a.len() as u64);
        let v = nmi(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!(ami(&a, &b).unwrap() <= 1.0);
        prop_assert!(ari(&a, &b).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn ami_is_one_only_for_relabelings((a, b) in pair()) {
        let c = contingency(&a, &b).unwrap();
        let bijective = c.counts.len() == c.counts[0].len()
            && c.counts.iter().all(|r| r.iter().filter(|&&v| v > 0).count() == 1)
            && (0..c.counts[0].len()).all(|j| c.counts.iter().filter(|r| r[j] > 0).count() == 1);
        prop_assert_eq!(ami(&a, &b).unwrap() == 1.0, bijective);
    }
}

#[test]
fn ari_of_independent_partitions_averages_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let trials = 1000;
    let mut total = 0.0;
    for _ in 0..trials {
        let a: Vec<u8> = (0..60).map(|_| rng.gen_range(0..4)).collect();
        let b: Vec<u8> = (0..60).map(|_| rng.gen_range(0..4)).collect();
        total += ari(&a, &b).unwrap();
    }
    assert!((total / trials as f64).abs() < 0.05);
}
