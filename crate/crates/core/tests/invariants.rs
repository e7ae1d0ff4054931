use std::collections::HashMap;

use nalgebra::DMatrix;
use proptest::prelude::*;

use triage_core::cohort::{generate_cohort, CohortConfig};
use triage_core::counterfactual::{apply_rule, bound_curves, default_grid, disparities_by_regime, DecisionData, DecisionRule};
use triage_core::frame::Frame;
use triage_core::index::{harm_index, standardize, IndexSpec, IndexVariant, OutcomeMatrix};
use triage_core::inference::{itt_spec, permutation_p, permutation_test, PermutationOptions};
use triage_core::{io, stats};

#[derive(Debug, Clone)]
struct Child {
    score: u8,
    human: bool,
    harm: f64,
    black: bool,
}

fn children(max: usize) -> impl Strategy<Value = Vec<Child>> {
    prop::collection::vec(
        (1u8..=20, any::<bool>(), -0.5f64..5.0, any::<bool>()).prop_map(|(score, human, harm, black)| Child {
            score,
            human,
            harm,
            black,
        }),
        2..max,
    )
}

fn decision_data(c: &[Child]) -> DecisionData {
    DecisionData {
        child_id: (0..c.len() as u64).map(|i| i * 3 + 1).collect(),
        score: c.iter().map(|x| x.score as f64).collect(),
        screened_in: c.iter().map(|x| x.human).collect(),
        treated: vec![false; c.len()],
        harm: c.iter().map(|x| x.harm).collect(),
        groups: vec![("black".into(), c.iter().map(|x| x.black).collect())],
    }
}

proptest! {
    #[test]
    fn bounds_start_at_human_only_and_fall_with_r(c in children(200), rate in 0.0f64..=1.0, seed in any::<u64>()) {
        let d = decision_data(&c);
        let grid = default_grid(0.0, 4.0, 21);
        let rules = [DecisionRule::AlgoOnly { rate }, DecisionRule::Oracle { rate }, DecisionRule::Mandate { threshold: 15.0 }];
        let b = bound_curves(&d, &rules, &grid, -0.5, seed).unwrap();
        for r in &b.regimes {
            prop_assert_eq!(r.mean_harm[0], b.human_only_mean);
            prop_assert!(r.mean_harm.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(r.mean_harm.iter().all(|m| *m >= r.asymptote - 1e-12));
        }
    }

    #[test]
    fn oracle_never_worse_than_algo_only(c in children(200), rate in 0.0f64..=1.0, seed in any::<u64>()) {
        let d = decision_data(&c);
        let grid = default_grid(0.0, 6.0, 31);
        let b = bound_curves(&d, &[DecisionRule::AlgoOnly { rate }, DecisionRule::Oracle { rate }], &grid, -0.5, seed).unwrap();
        let (a, o) = (&b.regimes[0].mean_harm, &b.regimes[1].mean_harm);
        for (x, y) in o.iter().zip(a) {
            prop_assert!(*x <= *y + 1e-12);
        }
    }

    #[test]
    fn rules_screen_in_exactly_ceil_rate_n(scores in prop::collection::vec(1u8..=3, 1..300), rate in 0.0f64..=1.0, seed in any::<u64>()) {
        // three distinct scores: almost every cut falls inside a tie
        let c: Vec<Child> = scores.iter().map(|&s| Child { score: s, human: s == 3, harm: s as f64, black: false }).collect();
        let d = decision_data(&c);
        let want = ((rate * c.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        for rule in [DecisionRule::AlgoOnly { rate }, DecisionRule::Oracle { rate }] {
            let n_in = apply_rule(&d, &rule, seed).unwrap().iter().filter(|b| **b).count();
            prop_assert_eq!(n_in, want);
        }
    }

    #[test]
    fn algo_only_disparities_ignore_outcomes(c in children(200), seed in any::<u64>(), shift in 1usize..50) {
        let d = decision_data(&c);
        let mut e = d.clone();
        e.harm.rotate_left(shift % c.len());
        let rule = DecisionRule::AlgoOnly { rate: 0.3 };
        let a = disparities_by_regime(&d, &["black"], &rule, seed).unwrap();
        let b = disparities_by_regime(&e, &["black"], &rule, seed).unwrap();
        prop_assert_eq!(a[0].algo_only, b[0].algo_only);
    }

    #[test]
    fn curves_are_deterministic(c in children(120), seed in any::<u64>()) {
        let d = decision_data(&c);
        let grid = default_grid(0.0, 4.0, 5);
        let rules = [DecisionRule::AlgoOnly { rate: 0.3 }, DecisionRule::Oracle { rate: 0.3 }];
        let a = bound_curves(&d, &rules, &grid, -0.5, seed).unwrap();
        let b = bound_curves(&d, &rules, &grid, -0.5, seed).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn standardized_reference_has_unit_moments(x in prop::collection::vec(-1e3f64..1e3, 3..100)) {
        prop_assume!(stats::sd(&x) > 1e-6);
        let z = standardize(&x, &vec![true; x.len()]).unwrap();
        prop_assert!(stats::mean(&z).abs() < 1e-12);
        prop_assert!((stats::variance(&z) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn index_ignores_outcome_rescaling(
        rows in prop::collection::vec(prop::array::uniform5(0u32..6), 20..80),
        col in 0usize..5,
        scale in 0.1f64..10.0,
        shift in 0.0f64..5.0,
    ) {
        let n = rows.len();
        let base = DMatrix::from_fn(n, 5, |i, j| rows[i][j] as f64);
        let reference: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let m = OutcomeMatrix::new(base.clone(), reference.clone());
        prop_assume!(m.is_ok());
        let m = m.unwrap();
        for variant in [IndexVariant::Equal, IndexVariant::Obrien, IndexVariant::Pca1, IndexVariant::Binary] {
            // binarizing only commutes with a pure positive rescaling
            let b = if variant == IndexVariant::Binary { 0.0 } else { shift };
            let mut moved = base.clone();
            moved.column_mut(col).apply(|v| *v = *v * scale + b);
            let spec = IndexSpec::new(variant);
            let (Ok(h0), Ok(h1)) = (harm_index(&m, &spec), harm_index(&OutcomeMatrix::new(moved, reference.clone()).unwrap(), &spec)) else {
                continue;
            };
            for (a, b) in h0.values.iter().zip(&h1.values) {
                prop_assert!((a - b).abs() < 1e-7, "{variant:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn permutation_p_lies_in_unit_interval(obs in -10.0f64..10.0, draws in prop::collection::vec(-10.0f64..10.0, 0..300)) {
        let (exceed, p) = permutation_p(obs, &draws);
        prop_assert!(exceed <= draws.len());
        prop_assert!(p > 0.0 && p <= 1.0);
        prop_assert!(p >= 1.0 / (draws.len() + 1) as f64);
    }
}

fn small_frame(y: &[f64], treated: &[bool]) -> Frame {
    let n = y.len();
    Frame::new(n)
        .with("household_id", (0..n).map(|i| (i / 2) as f64).collect())
        .unwrap()
        .with("child_id", (0..n).map(|i| i as f64).collect())
        .unwrap()
        .with("treated", (0..n).map(|i| treated[i / 2] as u8 as f64).collect())
        .unwrap()
        .with("rc_stratum", vec![0.0; n])
        .unwrap()
        .with("y", y.to_vec())
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn permutation_test_is_deterministic(
        y in prop::collection::vec(-3.0f64..3.0, 20..60),
        arms in prop::collection::vec(any::<bool>(), 30),
        seed in any::<u64>(),
    ) {
        let n = y.len() / 2 * 2;
        let treated = &arms[..n / 2];
        prop_assume!(treated.iter().any(|t| *t) && treated.iter().any(|t| !*t));
        let f = small_frame(&y[..n], treated);
        let spec = itt_spec(&f, "y");
        let opts = PermutationOptions::new(99, seed);
        let a = permutation_test(&f, &spec, &opts).unwrap();
        let b = permutation_test(&f, &spec, &opts).unwrap();
        prop_assert_eq!(a.p_value, b.p_value);
        prop_assert!(a.p_value > 0.0 && a.p_value <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn cohorts_are_reproducible_and_round_trip(seed in any::<u64>()) {
        let cfg = CohortConfig { seed, n_children: 1500, ..CohortConfig::default() };
        let a = generate_cohort(&cfg).unwrap();
        prop_assert_eq!(&a, &generate_cohort(&cfg).unwrap());

        let mut arm: HashMap<u64, bool> = HashMap::new();
        for r in &a {
            prop_assert!((1..=20).contains(&r.score));
            prop_assert_eq!(*arm.entry(r.household_id).or_insert(r.treated), r.treated);
        }

        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("c.csv");
        let jsonl = dir.path().join("c.jsonl");
        io::write_cohort_csv(&csv, &a, &[]).unwrap();
        io::write_cohort_jsonl(&jsonl, &a).unwrap();
        prop_assert_eq!(&io::read_cohort(&csv).unwrap(), &a);
        prop_assert_eq!(&io::read_cohort(&jsonl).unwrap(), &a);
    }
}
