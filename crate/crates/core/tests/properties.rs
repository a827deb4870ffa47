use proptest::prelude::*;

use farl::analysis::{normalize_scores, BestKMixture};
use farl::factored_actions::{composite_policy, combine, CombinationRule, FactorLogits, FactoredActionSpace};
use farl::harness::Checkpoint;

fn space_and_logits() -> impl Strategy<Value = (Vec<usize>, Vec<Vec<f64>>)> {
    prop::collection::vec(1usize..5, 1..4).prop_flat_map(|sizes| {
        let heads: Vec<_> = sizes.iter().map(|&n| prop::collection::vec(-20.0f64..20.0, n)).collect();
        (Just(sizes), heads)
    })
}

fn rule() -> impl Strategy<Value = CombinationRule> {
    prop::sample::select(CombinationRule::ALL.to_vec())
}

proptest! {
    #[test]
    fn index_bijection(sizes in prop::collection::vec(1usize..5, 1..5)) {
        let space = FactoredActionSpace::from_sizes(&sizes).unwrap();
        for i in 0..space.total() {
            let a = space.decompose_index(i).unwrap();
            prop_assert_eq!(space.compose_index(&a.factor_values).unwrap(), i);
        }
        prop_assert!(space.decompose_index(space.total()).is_err());
    }

    #[test]
    fn composite_policy_is_a_distribution((sizes, heads) in space_and_logits(), rule in rule()) {
        let space = FactoredActionSpace::from_sizes(&sizes).unwrap();
        let p = composite_policy(rule, &FactorLogits::new(heads), &space).unwrap();
        prop_assert_eq!(p.len(), space.total());
        prop_assert!(p.iter().all(|&x| x.is_finite() && x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sum_rule_is_shift_invariant_per_factor((sizes, heads) in space_and_logits(), shift in -5.0f64..5.0) {
        let space = FactoredActionSpace::from_sizes(&sizes).unwrap();
        let p = composite_policy(CombinationRule::Sum, &FactorLogits::new(heads.clone()), &space).unwrap();
        let mut shifted = heads;
        for x in &mut shifted[0] {
            *x += shift;
        }
        let q = composite_policy(CombinationRule::Sum, &FactorLogits::new(shifted), &space).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn combined_scores_are_ordered_for_means((sizes, heads) in space_and_logits()) {
        let space = FactoredActionSpace::from_sizes(&sizes).unwrap();
        let logits = FactorLogits::new(heads);
        let min = combine(CombinationRule::Minimum, &logits, &space).unwrap();
        let h = combine(CombinationRule::HarmonicMean, &logits, &space).unwrap();
        let g = combine(CombinationRule::GeometricMean, &logits, &space).unwrap();
        // Softplus makes the means positive, and hmean <= gmean.
        for i in 0..space.total() {
            prop_assert!(h[i] > 0.0 && h[i] <= g[i] * (1.0 + 1e-12));
            prop_assert!(min[i].is_finite());
        }
    }

    #[test]
    fn best_k_mixture_is_a_distribution(raw in prop::collection::vec(0.0f64..1.0, 2..20), eps in 0.0f64..=1.0, k in 1usize..4) {
        let z: f64 = raw.iter().sum::<f64>() + 1e-3;
        let policy: Vec<f64> = raw.iter().map(|x| (x + 1e-3 / raw.len() as f64) / z).collect();
        let k = k.min(policy.len());
        let m = BestKMixture::new(&policy, eps, k).unwrap();
        let p = m.probabilities();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for &b in m.best() {
            prop_assert!(p[b] >= (1.0 - eps) * policy[b] + eps / k as f64 - 1e-12);
        }
    }

    #[test]
    fn normalized_scores_peak_at_one(scores in prop::collection::vec(0.01f64..100.0, 1..12)) {
        let n = normalize_scores(&scores).unwrap();
        let max = n.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(max, 1.0);
        prop_assert!(n.iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn checkpoint_parser_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let mut framed = b"FARCKPT1".to_vec();
        framed.extend_from_slice(&bytes);
        prop_assert!(Checkpoint::from_bytes(&bytes).is_err());
        let _ = Checkpoint::from_bytes(&framed);
    }
}
