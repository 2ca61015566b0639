use echo_core::metrics::nmi;
use echo_core::Partition;
use proptest::prelude::*;

fn labels() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..60).prop_flat_map(|n| (proptest::collection::vec(0usize..6, n), proptest::collection::vec(0usize..6, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bounded_and_symmetric((a, b) in labels()) {
        let (a, b) = (Partition::new(a), Partition::new(b));
        let ab = nmi(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - nmi(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn relabelling_invariant((a, b) in labels(), perm in Just([3usize, 0, 5, 1, 4, 2])) {
        let pa = Partition::new(a.clone());
        let pb = Partition::new(b.clone());
        let relabelled = Partition::new(b.iter().map(|&l| perm[l] + 10));
        prop_assert!((nmi(&pa, &pb).unwrap() - nmi(&pa, &relabelled).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn self_similarity((a, _) in labels()) {
        let p = Partition::new(a);
        prop_assert!((nmi(&p, &p).unwrap() - 1.0).abs() < 1e-12);
    }
}
