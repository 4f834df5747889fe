mod common;

use modcomb::combiner::{
    compute_t_f, iterate, iterate_with, residual_learning, CombinationConfig, Relaxation,
};
use modcomb::diagnostics::{min_angle, oracle_values, SubspaceBasis};
use modcomb::hypothesis::values_norm;
use modcomb::testbed::{random_linear_instance, InstanceSpec, LinearInstance};
use modcomb::{InnerProductContext, Learner};
use proptest::prelude::*;
use rand::Rng;

fn instance(seed: u64) -> LinearInstance<f64> {
    let spec = InstanceSpec::random(&mut common::rng(seed));
    random_linear_instance(spec, seed).unwrap()
}

fn tight() -> CombinationConfig {
    CombinationConfig {
        epsilon: 1e-12,
        max_iterations: 5000,
        ..CombinationConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn residual_is_alternating_projection(seed in any::<u64>()) {
        let inst = instance(seed);
        let (g, h) = inst.learners().unwrap();
        let f = inst.data.targets();
        let cfg = CombinationConfig { max_iterations: 25, epsilon: 1e-30, ..CombinationConfig::default() };
        let mut r = f.clone();
        let mut worst = 0.0f64;
        iterate_with(&inst.data, &g, &h, &cfg, |s| {
            r = &r - h.project(&r).unwrap().values;
            r = &r - g.project(&r).unwrap().values;
            worst = worst.max((f - s.combined_values() - &r).amax());
        }).unwrap();
        prop_assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn residuals_never_increase(seed in any::<u64>()) {
        let inst = instance(seed);
        let (g, h) = inst.learners().unwrap();
        let st = iterate(&inst.data, &g, &h, &tight()).unwrap();
        for w in st.history.windows(2) {
            prop_assert!(w[1].residual_norm <= w[0].residual_norm + 1e-10);
        }
    }

    #[test]
    fn converged_iterate_matches_oracle(seed in any::<u64>()) {
        let inst = instance(seed);
        let (g, h) = inst.learners().unwrap();
        let st = iterate(&inst.data, &g, &h, &tight()).unwrap();
        let bg = SubspaceBasis::from_feature_map(&inst.data, &inst.map_g).unwrap();
        let bh = SubspaceBasis::from_feature_map(&inst.data, &inst.map_h).unwrap();
        let (oracle, _) = oracle_values(&inst.data, &bg, &bh).unwrap();
        // Nearly parallel pairs (c close to 1) may legitimately exhaust the iteration budget.
        prop_assume!(st.converged);
        prop_assert!((st.combined_values() - oracle).amax() < 1e-6);
    }

    #[test]
    fn error_respects_rate_bound(seed in any::<u64>()) {
        let inst = instance(seed);
        let (g, h) = inst.learners().unwrap();
        let bg = SubspaceBasis::from_feature_map(&inst.data, &inst.map_g).unwrap();
        let bh = SubspaceBasis::from_feature_map(&inst.data, &inst.map_h).unwrap();
        let c = min_angle(&bg, &bh).unwrap().c;
        prop_assume!(c < 1.0);
        let (oracle, _) = oracle_values(&inst.data, &bg, &bh).unwrap();
        let fnorm = values_norm(inst.data.targets());
        let mut ok = true;
        iterate_with(&inst.data, &g, &h, &CombinationConfig::default(), |s| {
            let err = values_norm(&(s.combined_values() - &oracle));
            ok &= err <= c.powi(2 * s.n as i32 - 1) * fnorm * (1.0 + 1e-6) + 1e-12 * fnorm;
        }).unwrap();
        prop_assert!(ok);
    }

    #[test]
    fn relaxation_step_is_optimal(seed in any::<u64>()) {
        let data = common::gaussian_data(seed, 20, 1, 2);
        let mut rng = common::rng(seed ^ 7);
        let prev = common::gaussian_data(seed.wrapping_add(1), 20, 1, 2).targets().clone();
        let curr = data.targets().clone();
        let ctx = InnerProductContext::new(&data);
        let t_f = compute_t_f(&prev, &curr, &ctx).unwrap();
        let at = |t: f64| ctx.norm(&(&prev + (&curr - &prev) * t)).unwrap();
        let best = at(t_f);
        for _ in 0..100 {
            let t = rng.random_range(-5.0..5.0);
            prop_assert!(best <= at(t) + 1e-10);
        }
    }

    #[test]
    fn one_dimensional_space_needs_one_acceleration(seed in any::<u64>(), g_is_line in any::<bool>()) {
        let mut rng = common::rng(seed);
        let other = rng.random_range(1..=3);
        let spec = InstanceSpec {
            samples: rng.random_range(20..60),
            input_dim: 5,
            g_dim: if g_is_line { 1 } else { other },
            h_dim: if g_is_line { other } else { 1 },
            target_dim: 1,
            shared: 0,
        };
        let inst = random_linear_instance::<f64>(spec, seed).unwrap();
        let (g, h) = inst.learners().unwrap();
        let cfg = CombinationConfig { accelerate: true, relaxation: Relaxation::Both, ..CombinationConfig::default() };
        let st = iterate(&inst.data, &g, &h, &cfg).unwrap();
        let fnorm = values_norm(inst.data.targets());
        let second = st.history.iter().find(|r| r.n == 2).map(|r| r.residual_norm);
        let done = st.history[0].residual_norm <= 1e-8 * fnorm;
        prop_assert!(done || second.is_some_and(|r| r <= 1e-8 * fnorm));
    }

    #[test]
    fn iteration_beats_residual_learning(seed in any::<u64>()) {
        let inst = instance(seed);
        let (g, h) = inst.learners().unwrap();
        let st = iterate(&inst.data, &g, &h, &CombinationConfig::default()).unwrap();
        let rl = residual_learning(&inst.data, &g, &h).unwrap();
        let f = inst.data.targets();
        let it_err = values_norm(&(f - st.combined_values()));
        let rl_err = values_norm(&(f - rl.combined_values()));
        prop_assert!(it_err <= rl_err + 1e-10);
    }
}
