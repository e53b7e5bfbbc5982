//! Property-based invariants over random inputs:
//!
//! 1. Censoring feedback is a pure function of (min(d,a), d>a) and the
//!    step cost is nonnegative, zero iff a = d.
//! 2. Inverse Mills Ratio dominates max(z, 0); its derivative stays in
//!    the open unit interval.
//! 3. Truncated means sit strictly below the untruncated mean.
//! 4. Min-max normalization lands every segment in [0, 1] and never uses
//!    validation/test statistics.
//! 5. Squashed policy actions stay inside their declared boxes for any
//!    weights and any state.
//! 6. The pessimism factor is monotone and saturates exactly.

use picrl_core::agent::{policy_forward, squash_action, PolicyNet, ETA_RANGE, K_RANGE, STATE_DIM};
use picrl_core::env::{step, CostModel};
use picrl_core::estimator::pessimism_factor;
use picrl_core::rng::Rng;
use picrl_core::stats::{inverse_mills, inverse_mills_derivative, truncated_mean_below};
use picrl_core::workload::{generate_seasonal, normalize_and_split, SplitSpec, Trace};
use proptest::prelude::*;

proptest! {
    #[test]
    fn env_step_invariants(d in 0.0f64..=1.0, a in 0.0f64..=1.0) {
        let cost = CostModel::default();
        let (fb, c) = step(d, a, &cost).unwrap();
        prop_assert_eq!(fb.y, d.min(a));
        prop_assert_eq!(fb.c, d > a);
        prop_assert!(c >= 0.0);
        if (a - d).abs() < f64::EPSILON {
            prop_assert_eq!(c, 0.0);
        } else {
            prop_assert!(c > 0.0);
        }
    }

    #[test]
    fn mills_ratio_dominates_and_derivative_in_unit_interval(z in -8.0f64..8.0) {
        let lam = inverse_mills(z);
        prop_assert!(lam > z.max(0.0));
        let d = inverse_mills_derivative(z);
        prop_assert!(d > 0.0 && d < 1.0);
    }

    #[test]
    fn truncated_mean_below_the_mean(
        mu in 0.0f64..1.0,
        sigma in 0.01f64..0.5,
        offset in -6.0f64..6.0,
    ) {
        let a = mu + offset * sigma;
        let m = truncated_mean_below(mu, sigma, a).unwrap();
        prop_assert!(m < mu);
        prop_assert!(m < a);
    }

    #[test]
    fn normalization_is_bounded_and_train_only(seed in 0u64..500) {
        let trace = generate_seasonal(600, 48, 0.3, seed).unwrap();
        let split = normalize_and_split(&trace, &SplitSpec::default()).unwrap();
        for seg in [&split.train, &split.val, &split.test] {
            prop_assert!(seg.demands.iter().all(|&d| (0.0..=1.0).contains(&d)));
        }
        // Scaling spec is untouched by tampering with the test segment.
        let mut tampered = Trace::new(trace.demands.clone(), "t");
        for d in tampered.demands[480..].iter_mut() {
            *d *= 7.0;
        }
        let split2 = normalize_and_split(&tampered, &SplitSpec::default()).unwrap();
        prop_assert_eq!(split.spec, split2.spec);
    }

    #[test]
    fn policy_actions_bounded_for_any_weights(seed in 0u64..200, scale in 0.1f64..4.0) {
        let mut rng = Rng::new(seed);
        let mut policy = PolicyNet::new(8, &mut rng);
        let n = policy.network().params().len();
        let params: Vec<f64> = (0..n).map(|_| rng.uniform_range(-scale, scale)).collect();
        policy.network_mut().set_params(&params);
        let mut features = [0.0; STATE_DIM];
        for f in features.iter_mut() {
            *f = rng.uniform_range(-2.0, 2.0);
        }
        for _ in 0..50 {
            let (out, raw, _) = policy_forward(&policy, &features, true, &mut rng);
            prop_assert!((ETA_RANGE.0..=ETA_RANGE.1).contains(&out.eta));
            prop_assert!((K_RANGE.0..=K_RANGE.1).contains(&out.k));
            prop_assert_eq!(squash_action(&raw), out);
        }
    }

    #[test]
    fn pessimism_monotone_saturating(beta in 0.0f64..2.0, n_max in 1usize..50) {
        let mut prev = 0.0;
        for n in 0..(2 * n_max + 5) {
            let p = pessimism_factor(n, beta, n_max);
            prop_assert!(p >= prev);
            prop_assert!(p >= 1.0);
            if n >= n_max {
                prop_assert_eq!(p, 1.0 + beta * n_max as f64);
            }
            prev = p;
        }
    }
}
