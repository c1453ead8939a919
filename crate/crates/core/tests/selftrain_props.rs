mod common;

use agitation::ensemble::{ClassifierKind, Hyperparams};
use agitation::selftrain::SelfTrainConfig;
use proptest::prelude::*;

fn quick() -> Hyperparams {
    Hyperparams { n_trees: 25, n_rounds: 25, ..Default::default() }
}

#[test]
fn invariants_hold_for_every_base_model() {
    for (s, kind) in ClassifierKind::ALL.into_iter().enumerate() {
        let (m, ..) = common::semi_supervised(s as u64, 300, 3, 1.2, 0.15);
        let cfg = SelfTrainConfig { base: kind, seed: s as u64, ..Default::default() };
        common::check_self_train_invariants(&m, &cfg, &quick()).unwrap();
    }
}

#[test]
fn max_iter_stops_the_loop() {
    let (m, ..) = common::semi_supervised(3, 300, 3, 1.0, 0.1);
    let cfg = SelfTrainConfig { base: ClassifierKind::ExtraTrees, max_iter: 1, threshold: 0.55, seed: 1 };
    let iterations = common::check_self_train_invariants(&m, &cfg, &quick()).unwrap();
    assert_eq!(iterations, 1);
}

#[test]
fn zero_unlabeled_equals_supervised_fit() {
    for kind in ClassifierKind::ALL {
        common::check_zero_unlabeled_identity(11, kind).unwrap();
    }
}

#[test]
fn blobs_pseudo_labels_are_accurate() {
    let e = common::blobs_efficacy(0);
    assert!(e.pseudo_accuracy >= 0.95, "pseudo-label accuracy {}", e.pseudo_accuracy);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn invariants_hold_for_random_thresholds(
        seed_value in 0u64..1000,
        threshold in 0.5f64..0.95,
        labeled in 0.05f64..0.5,
        kind in 0usize..3,
    ) {
        let (m, ..) = common::semi_supervised(seed_value, 150, 2, 1.0, labeled);
        let cfg = SelfTrainConfig { base: ClassifierKind::ALL[kind], threshold, max_iter: 100, seed: seed_value };
        let r = common::check_self_train_invariants(&m, &cfg, &quick());
        prop_assert!(r.is_ok(), "{:?}", r);
    }
}

