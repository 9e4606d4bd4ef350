mod common;

use common::{all_prompts, random_pair};
use domcert::adversary::{find_adversary_l, find_adversary_m, verify_bound_under_attack, PromptSpace};
use domcert::analysis::likelihood_m_exact;
use domcert::certificates::atomic_certificate;
use domcert::model::EnumerableModel;
use domcert::{Sequence, SequenceModel, TokenId};
use proptest::prelude::*;

const FLAT: [f64; 5] = [0.0, 0.25, 0.25, 0.25, 0.25];

/// `L` is flat except at `planted`, where it emits `[2, 2, EOS]` almost surely.
fn planted_l(planted: &[TokenId]) -> EnumerableModel {
    EnumerableModel::from_fn(3, 2, 4, |x, p| {
        if x != planted {
            FLAT.to_vec()
        } else if p.len() < 2 {
            vec![0.0, 0.001, 0.997, 0.001, 0.001]
        } else {
            vec![0.0, 0.997, 0.001, 0.001, 0.001]
        }
    })
    .unwrap()
}

fn flat_g() -> EnumerableModel {
    EnumerableModel::from_fn(3, 0, 4, |_, _| FLAT.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn planted_prompt_is_recovered(a in 2u32..5, b in 2u32..5) {
        let l = planted_l(&[a, b]);
        let space = PromptSpace::for_model(&l, 2);
        let adv = find_adversary_l(&l, &[2, 2, 1], &space).unwrap();
        prop_assert_eq!(adv.x, Sequence(vec![a, b]));
    }

    #[test]
    fn constrained_attack_respects_certificate(a in 2u32..5, b in 2u32..5, k in 0.0f64..1.5, t in 1usize..=3) {
        let (l, g) = (planted_l(&[a, b]), flat_g());
        let space = PromptSpace::for_model(&l, 2);
        let y = [2u32, 2, 1];
        let ac = atomic_certificate(&g, &y, k, t).unwrap();
        let unconstrained = find_adversary_l(&l, &y, &space).unwrap();
        prop_assert!(unconstrained.value > ac.eps());
        if let Some(m) = find_adversary_m(&l, &g, k, t, &y, &space, 4).unwrap() {
            prop_assert!(m.x != unconstrained.x);
            prop_assert!(m.value <= ac.eps() * (1.0 + 1e-12));
            let brute = all_prompts(l.symbols(), 2)
                .iter()
                .map(|x| likelihood_m_exact(&l, &g, k, t, x, &y, 4).unwrap().m)
                .fold(0.0, f64::max);
            prop_assert!((m.value - brute).abs() <= 1e-15);
        }
    }
}

#[test]
fn attack_shows_constriction_on_unlikely_response() {
    let (l, g) = (planted_l(&[4, 3]), flat_g());
    let space = PromptSpace::for_model(&l, 2);
    let s = verify_bound_under_attack(&l, &g, 0.5, 2, &[Sequence(vec![2, 2, 1])], &space, 4).unwrap();
    let r = &s.reports[0];
    assert_eq!(s.violations, 0);
    assert!(r.l_exceeds_certificate);
    assert!(r.l_value > r.log2_eps.exp2());
    assert!(r.m_value <= r.log2_eps.exp2());
}

#[test]
fn slack_constraint_gives_unconstrained_optimum() {
    for seed in 0..10 {
        let (l, g) = random_pair(seed, 3, 2, 4);
        let space = PromptSpace::for_model(&l, 2);
        for (y, _) in l.enumerate_support(&[2], 4).unwrap().entries {
            let a = find_adversary_l(&l, &y, &space).unwrap();
            let m = find_adversary_m(&l, &g, 60.0, 1, &y, &space, 4).unwrap().unwrap();
            assert_eq!(a, m, "seed {seed} y={y:?}");
        }
    }
}
