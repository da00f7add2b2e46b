//! Property tests for the structural invariants: step-function evaluation,
//! CSV round-trips, and probability-mass conservation of the nonparametric
//! risk curves.

use proptest::prelude::*;

use riskdiff_core::dataset::{load_csv, save_csv, ColumnSchema, Dataset, ObservedSample};
use riskdiff_core::risk::aalen_johansen;
use riskdiff_core::step::StepFunction;

fn jump_set() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((0.001_f64..100.0, -2.0_f64..2.0), 1..40).prop_map(|pairs| {
        let mut times: Vec<f64> = pairs.iter().map(|(t, _)| *t).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let increments: Vec<f64> = pairs.iter().take(times.len()).map(|(_, v)| *v).collect();
        (times, increments)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn step_function_matches_naive_sums((times, increments) in jump_set(), query in 0.0_f64..120.0) {
        let f = StepFunction::new(times.clone(), increments.clone()).unwrap();
        let naive_right: f64 = times
            .iter()
            .zip(&increments)
            .filter(|(t, _)| **t <= query)
            .map(|(_, v)| *v)
            .sum();
        let naive_left: f64 = times
            .iter()
            .zip(&increments)
            .filter(|(t, _)| **t < query)
            .map(|(_, v)| *v)
            .sum();
        prop_assert!((f.value(query) - naive_right).abs() < 1e-12);
        prop_assert!((f.left_value(query) - naive_left).abs() < 1e-12);
    }
}

fn random_dataset() -> impl Strategy<Value = Dataset> {
    prop::collection::vec(
        (0.01_f64..50.0, 0u8..3, prop::bool::ANY, -3.0_f64..3.0),
        8..60,
    )
    .prop_filter_map("needs both arms and a cause-1 event", |rows| {
        let samples: Vec<ObservedSample> = rows
            .iter()
            .map(|&(time, event, treated, x)| ObservedSample {
                time,
                event,
                treatment: u8::from(treated),
                covariates: vec![x],
            })
            .collect();
        Dataset::new(samples, vec!["X1".to_string()]).ok()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_round_trip_is_bit_exact(data in random_dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        save_csv(&data, &path).unwrap();
        let reloaded = load_csv(&path, &ColumnSchema::default()).unwrap();
        prop_assert_eq!(data.samples(), reloaded.samples());
    }

    #[test]
    fn aalen_johansen_conserves_mass_and_monotonicity(data in random_dataset()) {
        let curve = aalen_johansen(&data, None).unwrap();
        let mut prev_f1 = 0.0;
        let mut prev_s = 1.0;
        for &t in curve.times() {
            let (f1, f2, s) = curve.eval(t);
            prop_assert!((f1 + f2 + s - 1.0).abs() < 1e-12, "mass at {}", t);
            prop_assert!(f1 >= prev_f1 - 1e-15);
            prop_assert!(s <= prev_s + 1e-15);
            prop_assert!((-1e-15..=1.0 + 1e-15).contains(&f1));
            prop_assert!((-1e-15..=1.0 + 1e-15).contains(&s));
            prev_f1 = f1;
            prev_s = s;
        }
    }
}
