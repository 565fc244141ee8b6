use proptest::prelude::*;

use qkmeans_core::coordination::{run_merge_rounds, ExtremaState, WindowOutcome};
use qkmeans_core::graph::{assign_edge_orders_shuffled, generate_random_digraph};
use qkmeans_core::kmeans::CentroidSet;
use qkmeans_core::oracle::{brute_average, check_equivalence, global_extrema, lloyd_reference};
use qkmeans_core::sim::{run_consensus, run_kmeans, ConsensusOptions, KMeansRun};
use qkmeans_core::{BigInt, FractionVector};

fn to_big(rows: &[Vec<i64>]) -> Vec<Vec<BigInt>> {
    rows.iter().map(|r| r.iter().map(|&v| BigInt::from(v)).collect()).collect()
}

fn instance(max_n: usize, dims: std::ops::RangeInclusive<usize>, lo: i64, hi: i64) -> impl Strategy<Value = (usize, f64, u64, Vec<Vec<i64>>)> {
    (4..=max_n, dims, 0.0..0.6f64, any::<u64>()).prop_flat_map(move |(n, d, p, seed)| {
        (Just(n), Just(p), Just(seed), prop::collection::vec(prop::collection::vec(lo..=hi, d), n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn consensus_reaches_the_exact_average((n, p, seed, values) in instance(15, 1..=3, -50, 50), shuffle in any::<bool>()) {
        let g = generate_random_digraph(n, p, seed).unwrap();
        let initial = to_big(&values);
        let ordering = shuffle.then(|| assign_edge_orders_shuffled(&g, seed ^ 0x5eed));
        let opts = ConsensusOptions { ordering, record_messages: false, check_conservation: true };
        let trace = run_consensus(&g, &initial, &opts).unwrap();
        let expected = brute_average(&initial).unwrap();
        prop_assert_eq!(trace.estimates.len(), n);
        prop_assert!(trace.estimates.iter().all(|e| *e == expected));
        prop_assert!(trace.bound_ok());
        prop_assert!(trace.stored.iter().all(|s| s == &trace.stored[0]));
    }

    #[test]
    fn extrema_are_global_after_diameter_rounds(
        n in 3..30usize,
        p in 0.0..0.4f64,
        seed in any::<u64>(),
        points in prop::collection::vec(prop::option::of((-20i64..20, -20i64..20, 1i64..5)), 30),
    ) {
        let g = generate_random_digraph(n, p, seed).unwrap();
        let estimates: Vec<Option<FractionVector>> = points[..n]
            .iter()
            .map(|pt| pt.map(|(a, b, den)| FractionVector::new(vec![BigInt::from(a), BigInt::from(b)], den).unwrap()))
            .collect();
        let states = estimates.iter().map(|e| ExtremaState::snapshot(std::slice::from_ref(e), 2).unwrap()).collect();
        let d = g.diameter().unwrap();
        let merged = run_merge_rounds(&g, states, d).unwrap();
        match global_extrema(&estimates) {
            None => prop_assert!(merged.iter().all(|s| s.window_check() == vec![WindowOutcome::Empty])),
            Some((max, min)) => {
                for s in &merged {
                    let b = s.bounds(0).unwrap();
                    prop_assert_eq!(&b.max, &max);
                    prop_assert_eq!(&b.min, &min);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn distributed_kmeans_matches_lloyd(
        (n, p, seed, values) in instance(20, 2..=2, 0, 12),
        k in 1..4usize,
        init_seed in any::<u64>(),
    ) {
        let k = k.min(n - 1);
        let g = generate_random_digraph(n, p, seed).unwrap();
        let observations = to_big(&values);
        // Initial centroids drawn from the observations themselves.
        let initial = CentroidSet::initial(
            (0..k)
                .map(|i| FractionVector::from_integers(&observations[(init_seed as usize).wrapping_add(i * 7) % n]))
                .collect(),
        );
        let d = g.diameter().unwrap();
        let mut run = KMeansRun::new(g, observations.clone(), initial.clone(), d);
        run.check_conservation = true;
        let trace = run_kmeans(&run).unwrap();
        let oracle = lloyd_reference(&observations, &initial, run.max_rounds).unwrap();
        let report = check_equivalence(&trace, &oracle);
        prop_assert!(report.pass, "{:?}", report);
        prop_assert!(trace.verify().is_ok());
    }
}
