mod common;

use common::{all_prompts, bound_log2, phi_instance, random_pair, violates};
use domcert::analysis::{expected_iterations, likelihood_m_exact, m_distribution, multiplier};
use domcert::certificates::renyi_inf_between;
use domcert::valid::{simulate_valid, ValidConfig};
use domcert::{Sequence, SequenceModel};
use proptest::prelude::*;

const MAX_LEN: usize = 5;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn meta_model_never_exceeds_certificate(
        seed in 0u64..10_000,
        alphabet in 1usize..=3,
        k in -2.0f64..3.0,
        t in 1usize..=5,
    ) {
        let (l, g) = random_pair(seed, alphabet, 2, MAX_LEN);
        for x in all_prompts(l.symbols(), 2) {
            let dist = m_distribution(&l, &g, k, t, &x, MAX_LEN).unwrap();
            for (y, m) in &dist.entries {
                prop_assert!(!violates(*m, bound_log2(&g, y, k, t), 1e-12), "x={x:?} y={y:?} m={m}");
            }
        }
    }

    #[test]
    fn emissions_and_abstention_conserve_mass(
        seed in 0u64..10_000,
        alphabet in 1usize..=3,
        k in -2.0f64..3.0,
        t in 1usize..=5,
    ) {
        let (l, g) = random_pair(seed, alphabet, 1, MAX_LEN);
        for x in all_prompts(l.symbols(), 1) {
            let dist = m_distribution(&l, &g, k, t, &x, MAX_LEN).unwrap();
            let emitted: f64 = dist.entries.iter().map(|(_, m)| m).sum();
            prop_assert!((emitted + dist.abstain - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_likelihood_matches_distribution(seed in 0u64..10_000, k in -1.0f64..2.0, t in 1usize..=4) {
        let (l, g) = random_pair(seed, 2, 1, 4);
        let dist = m_distribution(&l, &g, k, t, &[2], 4).unwrap();
        let index = dist.index();
        for (y, _) in l.enumerate_support(&[2], 4).unwrap().entries {
            let exact = likelihood_m_exact(&l, &g, k, t, &[2], &y, 4).unwrap();
            let from_dist = index.get(&y).copied().unwrap_or(0.0);
            prop_assert!((exact.m - from_dist).abs() <= 1e-15);
        }
    }

    #[test]
    fn divergence_bound_implies_pointwise_bound(seed in 0u64..10_000, slack in 0.0f64..1.0) {
        let (l, g) = random_pair(seed, 2, 1, 4);
        for x in all_prompts(l.symbols(), 1) {
            let d = renyi_inf_between(&l, &g, &x, 4).unwrap();
            let k = d + slack;
            for (y, p) in l.enumerate_support(&x, 4).unwrap().entries {
                let gy = g.logprob_marginal(&y).unwrap().prob();
                prop_assert!(p <= k.exp2() * gy * (1.0 + 1e-12), "x={x:?} y={y:?}");
            }
        }
    }

    #[test]
    fn multiplier_lies_between_one_and_t(phi in 0.0f64..=1.0, t in 1usize..=50) {
        let m = multiplier(phi, t).unwrap();
        prop_assert!(m >= 1.0 - 1e-12);
        prop_assert!(m <= t as f64 * (1.0 + 1e-12));
    }

    #[test]
    fn multiplier_is_nondecreasing_in_phi(a in 0.0f64..=1.0, b in 0.0f64..=1.0, t in 1usize..=20) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(multiplier(lo, t).unwrap() <= multiplier(hi, t).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn multiplier_matches_geometric_sum(phi in 0.0f64..=1.0, t in 1usize..=30) {
        let direct: f64 = (0..t).map(|i| phi.powi(i as i32)).sum();
        prop_assert!((multiplier(phi, t).unwrap() - direct).abs() <= 1e-11 * direct);
    }
}

#[test]
fn half_rejection_three_tries_gives_seven_quarters() {
    let (l, g) = phi_instance(0.5);
    let y = Sequence(vec![2, 1]);
    let exact = likelihood_m_exact(&l, &g, 0.0, 3, &[], &y, 2).unwrap();
    assert_eq!(exact.phi, 0.5);
    assert_eq!(multiplier(0.5, 3).unwrap(), 1.75);
    assert!((exact.m - 0.875).abs() < 1e-15);

    let cfg = ValidConfig::new(0.0, 3, 2, 99).unwrap();
    let sim = simulate_valid(&l, &g, &cfg, &[], 1_000_000).unwrap();
    let se = sim.iterations_std_error();
    assert!((sim.mean_iterations() - expected_iterations(0.5, 3).unwrap()).abs() <= 3.0 * se);
    let f = sim.frequency(&y);
    let sigma = (exact.m * (1.0 - exact.m) / 1e6).sqrt();
    assert!((f - exact.m).abs() <= 3.0 * sigma, "freq {f} vs {}", exact.m);
}

#[test]
fn full_rejection_costs_exactly_t() {
    for t in [1, 2, 5, 17] {
        assert_eq!(multiplier(1.0, t).unwrap(), t as f64);
        assert_eq!(expected_iterations(1.0, t).unwrap(), t as f64);
    }
}
