mod common;

use std::sync::Arc;

use gridguard::case::{bundled_ieee14, Topology};
use gridguard::env::EnvConfig;
use gridguard::neural::normalize_adjacency;
use gridguard::powerflow::{solve, Injections, Start};
use gridguard::ppo::{choose, clipped_surrogate, compute_gae, masked_log_probs, ActMode};
use gridguard::reward::{overload_penalty, RewardConfig};
use gridguard::screening::{enumerate_contingencies, episode_seed, run_set, ScreenContext};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enumeration_is_complete_and_ordered(n in 1usize..=12, k_frac in 0.0f64..1.0) {
        let k = 1 + ((n as f64 - 1.0) * k_frac).round() as usize;
        let plan = enumerate_contingencies(n, k).unwrap();
        prop_assert_eq!(plan.sets.len() as u64, common::binomial_recursive(n as u64, k as u64));
        for s in &plan.sets {
            prop_assert_eq!(s.len(), k);
            prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(s.iter().all(|&l| l < n));
        }
        prop_assert!(plan.sets.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn masked_distribution_is_normalised(
        logits in prop::collection::vec(-30.0f64..30.0, 1..60),
        mask_bits in prop::collection::vec(any::<bool>(), 60),
        seed in any::<u64>(),
    ) {
        let mut mask: Vec<bool> = mask_bits[..logits.len()].to_vec();
        mask[seed as usize % logits.len()] = true;
        let logp = masked_log_probs(&logits, &mask).unwrap();
        let total: f64 = logp.iter().zip(&mask).filter(|(_, &m)| m).map(|(l, _)| l.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for (l, &m) in logp.iter().zip(&mask) {
            prop_assert!(m || *l == f64::NEG_INFINITY);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(mask[choose(&logp, &mask, ActMode::Sample, &mut rng)]);
        let g = choose(&logp, &mask, ActMode::Greedy, &mut rng);
        prop_assert!(mask[g]);
        prop_assert!(logp.iter().zip(&mask).all(|(l, &m)| !m || *l <= logp[g]));
    }

    #[test]
    fn surrogate_is_a_pessimistic_bound(ratio in 0.0f64..5.0, adv in -10.0f64..10.0, eps in 0.01f64..0.99) {
        let s = clipped_surrogate(ratio, adv, eps);
        prop_assert!(s <= ratio * adv);
        prop_assert_eq!(clipped_surrogate(ratio, adv, 1e9), ratio * adv);
        if (1.0 - eps..=1.0 + eps).contains(&ratio) {
            prop_assert_eq!(s, ratio * adv);
        }
    }

    #[test]
    fn gae_with_unit_lambda_is_discounted_return(
        rewards in prop::collection::vec(-5.0f64..5.0, 1..40),
        gamma in 0.5f64..1.0,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rewards.len();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut dones = vec![false; n];
        dones[n - 1] = true;
        let (adv, ret) = compute_gae(&rewards, &values, &dones, 123.0, gamma, 1.0);
        let mut g = 0.0;
        for t in (0..n).rev() {
            g = rewards[t] + gamma * g;
            prop_assert!((ret[t] - g).abs() < 1e-9);
            prop_assert!((adv[t] + values[t] - g).abs() < 1e-9);
        }
    }

    #[test]
    fn adjacency_is_symmetric_and_positive(n in 1usize..12, extra in 0usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges = common::random_graph(n, extra, &mut rng);
        let a = normalize_adjacency(&edges, n);
        for i in 0..n {
            prop_assert!(a[i * n + i] > 0.0);
            for j in 0..n {
                prop_assert_eq!(a[i * n + j], a[j * n + i]);
                prop_assert!(a[i * n + j] >= 0.0 && a[i * n + j] <= 1.0);
            }
        }
    }

    #[test]
    fn overload_penalty_counts_lines(rho in prop::collection::vec(0.0f64..2.0, 0..25)) {
        let cfg = RewardConfig::default();
        let count = rho.iter().filter(|&&r| r > cfg.rho_threshold).count() as f64;
        prop_assert_eq!(overload_penalty(&rho, &cfg), -cfg.beta_overload * count);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn power_flow_respects_losses(scale in 0.6f64..1.3, outage in 0usize..20) {
        let case = bundled_ieee14();
        let mut topo = Topology::nominal(&case);
        topo.line_status[outage] = false;
        let n_loads = case.loads.len();
        let n_gens = case.generators.len();
        let inj = Injections::scaled(&case, &vec![scale; n_loads], &vec![scale; n_gens]);
        if let Ok(sol) = solve(&case, &topo, &inj, Start::Flat) {
            prop_assert!(sol.converged);
            let load: f64 = inj.load_p_mw.iter().sum::<f64>() - sol.shed_load_mw(&inj);
            let gen: f64 = sol.gen_p_mw.iter().sum();
            prop_assert!(gen >= load - 1e-6, "generation {} below load {}", gen, load);
            prop_assert!(sol.rho.iter().all(|r| r.is_finite() && *r >= 0.0));
            prop_assert_eq!(sol.rho[outage], 0.0);
        }
    }

    #[test]
    fn cascade_bookkeeping_adds_up(a in 0usize..20, b in 0usize..20, seed in any::<u64>()) {
        prop_assume!(a != b);
        let ctx = ScreenContext::new(Arc::new(bundled_ieee14()), EnvConfig::hostile());
        let set = vec![a.min(b), a.max(b)];
        let r = run_set(&ctx, None, 2, 0, &set, episode_seed(seed, 2, 0)).unwrap();
        prop_assert_eq!(r.cascade_series.iter().sum::<usize>(), r.total_cascades);
        prop_assert!(r.steps_survived <= 100);
        prop_assert!(r.cascade_series.len() == r.steps_survived + usize::from(r.failure_cause.is_blackout() && !r.cascade_series.is_empty()));
    }
}
