#![allow(dead_code)]

use domcert::exec;
use domcert::model::EnumerableModel;
use domcert::{Sequence, SequenceModel, TokenId};

/// Random conditional `L` and unconditional `G` over the same alphabet.
pub fn random_pair(seed: u64, alphabet: usize, prompt_len: usize, max_len: usize) -> (EnumerableModel, EnumerableModel) {
    let mut rng = exec::stream_rng(seed, 0);
    let sharpness = 0.5 + (seed % 4) as f64 * 0.5;
    let l = EnumerableModel::random(alphabet, prompt_len, max_len, sharpness, &mut rng).unwrap();
    let g = EnumerableModel::random(alphabet, 0, max_len, sharpness, &mut rng).unwrap();
    (l, g)
}

/// Every string over `symbols` of length `0..=max_len`, shortest first.
pub fn all_prompts(symbols: std::ops::Range<TokenId>, max_len: usize) -> Vec<Vec<TokenId>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for p in &frontier {
            for s in symbols.clone() {
                let mut q: Vec<TokenId> = p.clone();
                q.push(s);
                next.push(q);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// `log2 2^(k N) T G(y)` computed from the guide directly.
pub fn bound_log2<G: SequenceModel + ?Sized>(g: &G, y: &Sequence, k: f64, t: usize) -> f64 {
    k * y.len() as f64 + (t as f64).log2() + g.logprob_marginal(y).unwrap().bits()
}

/// `y` exceeds `bound` by more than the relative tolerance.
pub fn violates(m: f64, bound_log2: f64, rel_tol: f64) -> bool {
    m > bound_log2.exp2() * (1.0 + rel_tol)
}

/// Two-state instance with rejection probability `phi`: `L` emits `[2, EOS]`
/// with probability `1 - phi` and `[3, EOS]` otherwise; `G` only ever emits
/// `[2, EOS]`, so `[3, EOS]` is always rejected.
pub fn phi_instance(phi: f64) -> (EnumerableModel, EnumerableModel) {
    let l = EnumerableModel::from_fn(2, 0, 2, |_, _| vec![0.0, 0.0, 1.0 - phi, phi]).unwrap();
    let g = EnumerableModel::from_fn(2, 0, 2, |_, _| vec![0.0, 0.0, 1.0, 0.0]).unwrap();
    (l, g)
}
