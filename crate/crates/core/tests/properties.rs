//! Property tests over the public API: dataset validation, sequence
//! normalization, and layout round-trips.

use proptest::prelude::*;

use pstrat_core::data::{Dataset, FirmRecord, Outcome};
use pstrat_core::model::{
    sequence_prob, BlockLayout, ModelError, ParamVector, SlopeMode,
};
use pstrat_core::strata::{enumerate_sequences, Arm};

fn arm_strategy() -> impl Strategy<Value = Arm> {
    prop_oneof![Just(Arm::Control), Just(Arm::Treated)]
}

/// A valid record: absorbing survival, outcomes defined exactly while
/// alive.
fn valid_record(periods: usize, k: usize) -> impl Strategy<Value = FirmRecord> {
    (
        "[a-z][a-z0-9]{0,6}",
        proptest::collection::vec(-2.0..2.0f64, k),
        arm_strategy(),
        0..=periods,
        proptest::collection::vec(any::<bool>(), periods),
    )
        .prop_map(move |(id, x, w, alive, raw_y)| {
            let s: Vec<bool> = (0..periods).map(|t| t < alive).collect();
            let y: Vec<Outcome> =
                s.iter().zip(raw_y).map(|(&a, v)| a.then_some(v)).collect();
            FirmRecord { id, x, w, s, y }
        })
}

proptest! {
    #[test]
    fn valid_records_are_accepted(records in proptest::collection::vec(valid_record(3, 2), 1..20)) {
        // Deduplicate ids; collisions are exercised separately.
        let mut seen = std::collections::BTreeSet::new();
        let records: Vec<FirmRecord> = records
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                if !seen.insert(r.id.clone()) {
                    r.id = format!("{}_{i}", r.id);
                }
                seen.insert(r.id.clone());
                r
            })
            .collect();
        let names = vec!["x1".to_string(), "x2".to_string()];
        prop_assert!(Dataset::new_allowing_empty_arm(records, names).is_ok());
    }

    #[test]
    fn truncation_rule_violations_are_rejected(
        r in valid_record(3, 1),
        flip in 0usize..3,
    ) {
        let mut r = r;
        // Corrupt one period: outcome after death or truncation while alive.
        let was_alive = r.s[flip];
        r.y[flip] = if was_alive { None } else { Some(true) };
        let names = vec!["x1".to_string()];
        prop_assert!(Dataset::new_allowing_empty_arm(vec![r], names).is_err());
    }

    #[test]
    fn non_absorbing_survival_is_rejected(
        r in valid_record(3, 1),
        dead_at in 0usize..2,
    ) {
        let mut r = r;
        // Force a death followed by a revival.
        r.s[dead_at] = false;
        r.s[dead_at + 1] = true;
        r.y[dead_at] = None;
        r.y[dead_at + 1] = Some(true);
        let names = vec!["x1".to_string()];
        prop_assert!(Dataset::new_allowing_empty_arm(vec![r], names).is_err());
    }

    #[test]
    fn sequence_probabilities_normalize(
        theta_raw in proptest::collection::vec(-4.0..4.0f64, 59),
        x in proptest::collection::vec(-1.5..1.5f64, 3),
    ) {
        let layout = BlockLayout::new(3, 3, SlopeMode::Shared);
        prop_assert_eq!(layout.dim(), 59);
        let theta = ParamVector::from_values(&layout, theta_raw).unwrap();
        let total: f64 = enumerate_sequences(3, true)
            .unwrap()
            .iter()
            .map(|s| sequence_prob(&layout, theta.as_slice(), s, &x).unwrap())
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "sum {}", total);
    }

    #[test]
    fn pack_unpack_is_bit_exact(values in proptest::collection::vec(any::<f64>(), 38)) {
        prop_assume!(values.iter().all(|v| v.is_finite()));
        let layout = BlockLayout::new(3, 1, SlopeMode::Shared);
        prop_assert_eq!(layout.dim(), 38);
        let unpacked = layout.unpack(&values).unwrap();
        let packed = layout.pack(&unpacked).unwrap();
        for (a, b) in values.iter().zip(&packed) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn dimension_mismatches_error(extra in 1usize..5) {
        let layout = BlockLayout::new(2, 1, SlopeMode::Shared);
        let bad = vec![0.0; layout.dim() + extra];
        let err = layout.unpack(&bad).unwrap_err();
        let is_dim = matches!(err, ModelError::DimensionMismatch { .. });
        prop_assert!(is_dim);
    }
}
