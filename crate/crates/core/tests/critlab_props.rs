use lcnlab_core::critlab::{crit_on_stratum, dedup_filters, EdDegreeTable, EdNorm, DEDUP_TOL};
use lcnlab_core::optim::QuadLoss;
use lcnlab_core::rootlab::Partition;
use lcnlab_core::Filter;
use proptest::prelude::*;

fn partition() -> impl Strategy<Value = Partition> {
    prop::sample::select(vec!["2,1,1", "2,2", "3,1", "4", "2,1", "3", "2"])
        .prop_map(|s| s.parse().unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stratum_points_are_critical_distinct_and_bounded(
        lambda in partition(),
        coeffs in prop::collection::vec(-3.0f64..3.0, 5),
        bombieri in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let n = lambda.degree();
        let u = Filter(coeffs[..=n].to_vec());
        let (loss, norm) = if bombieri {
            (QuadLoss::bombieri(u), EdNorm::Bombieri)
        } else {
            (QuadLoss::identity(u), EdNorm::Generic)
        };
        let rep = crit_on_stratum(&loss, &lambda, 40, seed).unwrap();
        let bound = EdDegreeTable::default().get(&lambda, norm).unwrap();
        prop_assert!(rep.points.len() <= bound, "{} points, bound {}", rep.points.len(), bound);
        for p in &rep.points {
            prop_assert!(p.residual <= 1e-8);
            prop_assert!((loss.value(&p.w) - p.loss).abs() <= 1e-9 * (1.0 + p.loss));
        }
        let ws: Vec<Filter> = rep.points.iter().map(|p| p.w.clone()).collect();
        prop_assert_eq!(dedup_filters(&ws, DEDUP_TOL).len(), ws.len());
    }
}
