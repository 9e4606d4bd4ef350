mod common;

use domcert::analysis::ecdf_and_histograms;
use domcert::certificates::{
    constriction_ratio, domain_certificate, domain_certificate_from_scores, solve_k_for_log2_epsilon, AtomicCertificate,
    CertItem, GuideScore,
};
use domcert::exec;
use domcert::model::EnumerableModel;
use domcert::valid::{write_records_csv, EvalRecord, Label};
use domcert::{LogProb, Sequence, SequenceModel};
use proptest::prelude::*;
use rand::Rng;

fn scores_strategy(max: usize) -> impl Strategy<Value = Vec<GuideScore>> {
    prop::collection::vec((1usize..40, -300.0f64..-0.5), 1..max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (n_y, log2_g))| GuideScore { id: format!("F{i:04}"), n_y, log2_g })
            .collect()
    })
}

/// Largest `k` in `[lo, hi]` with certificate at most `target`, by bisection
/// on the domain certificate itself.
fn bisect_k(scores: &[GuideScore], t: usize, target: f64, q: f64) -> f64 {
    let cert = |k: f64| domain_certificate_from_scores(scores, k, t, q, String::new()).unwrap().log2_eps;
    let (mut lo, mut hi) = (-1e3, 1e3);
    assert!(cert(lo) <= target && cert(hi) > target);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cert(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solved_k_matches_bisection(
        scores in scores_strategy(30),
        t in 1usize..=10,
        log2_eps in -400.0f64..-1.0,
        q in prop::sample::select(vec![1.0, 0.9, 0.5]),
    ) {
        let solved = solve_k_for_log2_epsilon(&scores, t, log2_eps, q, -1e9).unwrap();
        let oracle = bisect_k(&scores, t, log2_eps, q);
        prop_assert!((solved.k - oracle).abs() <= 1e-9, "{} vs {oracle}", solved.k);
    }

    #[test]
    fn solved_k_round_trips_to_target(
        scores in scores_strategy(30),
        t in 1usize..=10,
        log2_eps in -400.0f64..-1.0,
        q in prop::sample::select(vec![1.0, 0.75]),
    ) {
        let solved = solve_k_for_log2_epsilon(&scores, t, log2_eps, q, -1e9).unwrap();
        let dc = domain_certificate_from_scores(&scores, solved.k, t, q, String::new()).unwrap();
        prop_assert!((dc.log2_eps - log2_eps).abs() <= 1e-9);
        prop_assert_eq!(dc.witness_id, solved.binding_id);
    }

    #[test]
    fn certificate_scales_linearly_in_t(scores in scores_strategy(20), k in -3.0f64..3.0, t in 1usize..=64) {
        let one = domain_certificate_from_scores(&scores, k, 1, 1.0, String::new()).unwrap();
        let many = domain_certificate_from_scores(&scores, k, t, 1.0, String::new()).unwrap();
        prop_assert_eq!(&one.witness_id, &many.witness_id);
        let ratio = (many.log2_eps - one.log2_eps).exp2();
        prop_assert!((ratio / t as f64 - 1.0).abs() <= 1e-12, "ratio {ratio} for T={t}");
    }

    #[test]
    fn atomic_certificate_is_sum_of_parts(n_y in 1usize..100, log2_g in -500.0f64..0.0, k in -5.0f64..5.0, t in 1usize..100) {
        let ac = AtomicCertificate::from_parts(k, t, n_y, log2_g).unwrap();
        let parts = k * n_y as f64 + (t as f64).log2() + log2_g;
        prop_assert_eq!(ac.log2_eps, parts);
    }

    #[test]
    fn witness_dominates_every_item(scores in scores_strategy(40), k in -3.0f64..3.0, t in 1usize..=8) {
        let dc = domain_certificate_from_scores(&scores, k, t, 1.0, String::new()).unwrap();
        for s in &scores {
            let ac = AtomicCertificate::from_parts(k, t, s.n_y, s.log2_g).unwrap();
            prop_assert!(ac.log2_eps <= dc.log2_eps);
        }
        prop_assert_eq!(dc.witness.log2_eps, dc.log2_eps);
    }
}

#[test]
fn domain_certificate_equals_brute_force_max() {
    let g = {
        let mut rng = exec::stream_rng(21, 0);
        EnumerableModel::random(3, 0, 6, 1.0, &mut rng).unwrap()
    };
    let mut rng = exec::stream_rng(21, 1);
    let items: Vec<CertItem> = (0..100)
        .map(|i| {
            let len = rng.random_range(0..5);
            let mut y: Vec<u32> = (0..len).map(|_| rng.random_range(2..5)).collect();
            y.push(1);
            CertItem::new(format!("F{i:03}"), y)
        })
        .collect();
    for (k, t) in [(-1.0, 1), (0.0, 3), (2.5, 5)] {
        let dc = domain_certificate(&g, &items, k, t, 1.0).unwrap();
        let brute = items
            .iter()
            .map(|it| {
                let log2_g: f64 = (0..it.y.len()).map(|n| g.next_log2(&[], &it.y[..n], it.y[n]).unwrap()).sum();
                k * it.y.len() as f64 + (t as f64).log2() + log2_g
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((dc.log2_eps - brute).abs() <= 1e-12 * brute.abs(), "{} vs {brute}", dc.log2_eps);
    }
}

#[test]
fn certificate_bounds_exact_meta_model_over_all_prompts() {
    use common::{all_prompts, random_pair};
    use domcert::analysis::likelihood_m_exact;
    use domcert::certificates::atomic_certificate;
    let (l, g) = random_pair(5, 2, 3, 5);
    let (k, t) = (0.5, 3);
    let targets: Vec<Sequence> = l.enumerate_support(&[2, 3], 5).unwrap().entries.into_iter().map(|(y, _)| y).collect();
    for y in &targets {
        let ac = atomic_certificate(&g, y, k, t).unwrap();
        for x in all_prompts(l.symbols(), 3) {
            let m = likelihood_m_exact(&l, &g, k, t, &x, y, 5).unwrap().m;
            assert!(m <= ac.eps() * (1.0 + 1e-12), "x={x:?} y={y:?}");
        }
    }
}

#[test]
fn median_constriction_matches_csv_recomputation() {
    let mut rng = exec::stream_rng(4, 0);
    let records: Vec<EvalRecord> = (0..301)
        .map(|i| {
            let n_y = rng.random_range(2..30);
            let log_g = -(n_y as f64) * rng.random_range(2.0..6.0);
            let log_l = -(n_y as f64) * rng.random_range(0.5..8.0);
            EvalRecord {
                id: format!("F{i:03}"),
                label: Label::OutOfDomain,
                n_y,
                log_l,
                log_g,
                norm_ratio: (log_l - log_g) / n_y as f64,
            }
        })
        .collect();
    let (k, t) = (1.0, 2);
    let cr: Vec<f64> = records
        .iter()
        .map(|r| {
            let ac = AtomicCertificate::from_parts(k, t, r.n_y, r.log_g).unwrap();
            constriction_ratio(LogProb(r.log_l), &ac).log10_cr
        })
        .collect();
    let median = ecdf_and_histograms(&cr, 10).unwrap().p50;

    let mut buf = Vec::new();
    write_records_csv(&mut buf, &records).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (c_n, c_l, c_g) = (col("n_y"), col("logL_bits"), col("logG_bits"));
    let mut recomputed: Vec<f64> = lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let n: f64 = f[c_n].parse().unwrap();
            let log_l: f64 = f[c_l].parse().unwrap();
            let log_g: f64 = f[c_g].parse().unwrap();
            let log2_eps = k * n + (t as f64).log2() + log_g;
            (log_l - log2_eps) * std::f64::consts::LOG10_2
        })
        .collect();
    recomputed.sort_by(f64::total_cmp);
    let oracle = recomputed[recomputed.len() / 2];
    assert!((median - oracle).abs() <= 1e-12 * oracle.abs().max(1.0), "{median} vs {oracle}");
}
