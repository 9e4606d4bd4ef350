use std::collections::HashSet;

use domcert::chartask::{
    self, apply_task, build_dataset, check_valid_sequence, generate_item, CharTaskItem, CharTaskSpec, Task, QUERY,
};
use domcert::exec;
use proptest::prelude::*;
use rand::Rng;

fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn generated_items_are_well_formed(seed in 0u64..100_000, general in any::<bool>()) {
        let spec = if general {
            CharTaskSpec::general(1, 0, 0, seed)
        } else {
            CharTaskSpec::target(1, 0, 0, seed)
        };
        let mut rng = exec::stream_rng(seed, 0);
        let item = generate_item(&spec, &mut rng);
        prop_assert_eq!(&item.s_out, &apply_task(item.task, &item.s_in));
        prop_assert_eq!(item.task_tokens[0], item.task);
        prop_assert_eq!(item.task_tokens.iter().collect::<HashSet<_>>().len(), 4);
        prop_assert_eq!(item.flat()[0], QUERY);
        prop_assert!(item.s_in.len() <= 49);
        prop_assert_eq!(CharTaskItem::parse_line(&item.to_line()).unwrap(), item);
    }
}

#[test]
fn ten_thousand_items_are_valid() {
    let vocab = chartask::vocabulary();
    for spec in [CharTaskSpec::general(10_000, 0, 0, 1), CharTaskSpec::target(10_000, 0, 0, 2)] {
        let ds = build_dataset(&spec).unwrap();
        assert_eq!(ds.train.len(), 10_000);
        for it in &ds.train {
            assert!(check_valid_sequence(&it.to_sequence(&vocab).unwrap(), &vocab), "{}", it.to_line());
        }
    }
}

#[test]
fn task_frequencies_are_uniform() {
    let ds = build_dataset(&CharTaskSpec::general(10_000, 0, 0, 3)).unwrap();
    let n = ds.train.len() as f64;
    let sigma = (n * 0.25 * 0.75).sqrt();
    for task in Task::ALL {
        let c = ds.train.iter().filter(|it| it.task == task).count() as f64;
        assert!((c - n / 4.0).abs() <= 3.0 * sigma, "{task}: {c}");
    }
}

#[test]
fn target_and_forbidden_specs_do_not_overlap() {
    let t = build_dataset(&CharTaskSpec::target(10_000, 0, 0, 4)).unwrap();
    let f = build_dataset(&CharTaskSpec::out_of_domain(10_000, 0, 0, 5)).unwrap();
    let lines: HashSet<String> = t.train.iter().map(CharTaskItem::to_line).collect();
    assert!(f.train.iter().all(|it| !lines.contains(&it.to_line())));
    assert!(f.train.iter().all(|it| !it.in_target_domain()));
    assert!(t.train.iter().all(CharTaskItem::in_target_domain));
}

#[test]
fn int_pool_table_rows() {
    let x = s(&["5", "3", "6"]);
    assert_eq!(apply_task(Task::Sort, &x), s(&["3", "5", "6"]));
    assert_eq!(apply_task(Task::AddOne, &x), s(&["6", "4", "7"]));
    assert_eq!(apply_task(Task::ReverseSort, &x), s(&["6", "5", "3"]));
    assert_eq!(apply_task(Task::EvenOdd, &x), s(&["6", "3", "5"]));
}

#[test]
fn single_token_corruptions_are_rejected() {
    let vocab = chartask::vocabulary();
    let ds = build_dataset(&CharTaskSpec::general(200, 0, 0, 6)).unwrap();
    let mut rng = exec::stream_rng(6, 0);
    let mut mutations = 0;
    while mutations < 1000 {
        let it = &ds.train[rng.random_range(0..ds.train.len())];
        let mut seq = it.to_sequence(&vocab).unwrap().into_inner();
        let pos = rng.random_range(0..seq.len());
        let new = rng.random_range(0..vocab.len() as u32);
        if new == seq[pos] {
            continue;
        }
        seq[pos] = new;
        assert!(!check_valid_sequence(&seq, &vocab), "{} at {pos} -> {new}", it.to_line());
        mutations += 1;
    }
}
