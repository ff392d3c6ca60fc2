//! Property tests for the numerical core and the mediation protocol.

mod common;

use proptest::prelude::*;

fn holds(check: common::Check) -> Result<(), TestCaseError> {
    check.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn backprop_matches_finite_differences(seed in any::<u64>()) {
        holds(common::backprop_gradient(seed))?;
    }

    #[test]
    fn policy_loss_gradient_matches_finite_differences(seed in any::<u64>()) {
        holds(common::policy_loss_gradient(seed))?;
    }

    #[test]
    fn masked_softmax_invariants(
        logits in prop::collection::vec(-30.0f64..30.0, 2..7),
        mask_bits in any::<u8>(),
        keep in any::<prop::sample::Index>(),
        shift in -50.0f64..50.0,
    ) {
        let n = logits.len();
        let mut mask: Vec<bool> = (0..n).map(|i| mask_bits >> i & 1 == 1).collect();
        mask[keep.index(n)] = true;
        holds(common::masked_softmax(&logits, &mask, shift))?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn constrained_mediator_is_naive_at_zero_multipliers(seed in any::<u64>()) {
        holds(common::constrained_matches_naive_at_zero(seed))?;
    }

    #[test]
    fn multipliers_stay_positive_and_bounded(seed in any::<u64>()) {
        holds(common::multipliers_bounded(seed))?;
    }

    #[test]
    fn multipliers_follow_constraint_violations(seed in any::<u64>()) {
        holds(common::dual_descent_direction(seed))?;
    }

    #[test]
    fn coalition_is_constant_within_windows(seed in any::<u64>()) {
        holds(common::coalition_windows(seed))?;
    }

    #[test]
    fn mediator_return_is_sum_of_member_returns(seed in any::<u64>()) {
        holds(common::return_decomposition(seed))?;
    }
}
