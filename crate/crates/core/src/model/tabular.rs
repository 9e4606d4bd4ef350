use std::collections::HashMap;

use rand::{Rng, RngCore};

use super::{SequenceModel, TokenId};
use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-9;

/// Explicit conditional probability table over a small, fully enumerable space.
///
/// Ids: BOS = 0, EOS = 1, symbols `2..2 + alphabet`. Prompts are symbol strings
/// of length `<= max_prompt_len`; responses have at most `max_len` tokens with
/// EOS forced at the last position, so every prompt's terminated responses
/// carry total mass one.
#[derive(Clone, Debug)]
pub struct EnumerableModel {
    alphabet: usize,
    max_prompt_len: usize,
    max_len: usize,
    table: HashMap<(u64, u64), Box<[f64]>>,
}

impl EnumerableModel {
    /// Builds the table by calling `f(prompt, prefix)` for every context.
    /// Distributions at prefix length `max_len - 1` are replaced by EOS.
    pub fn from_fn<F>(alphabet: usize, max_prompt_len: usize, max_len: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(&[TokenId], &[TokenId]) -> Vec<f64>,
    {
        if alphabet == 0 || max_len == 0 {
            return Err(Error::input("alphabet and max_len must be positive"));
        }
        let base = alphabet as u64 + 1;
        let longest = max_prompt_len.max(max_len);
        if base.checked_pow(longest as u32 + 1).is_none() {
            return Err(Error::Resource("tabular context encoding overflows".into()));
        }
        let prompts = all_strings(alphabet, max_prompt_len);
        let prefixes = all_strings(alphabet, max_len - 1);
        let rows = prompts.len().saturating_mul(prefixes.len());
        if rows > 5_000_000 {
            return Err(Error::Resource(format!("tabular model would need {rows} rows")));
        }
        let vocab = alphabet + 2;
        let mut table = HashMap::with_capacity(rows);
        for x in &prompts {
            for p in &prefixes {
                let dist = if p.len() == max_len - 1 {
                    let mut d = vec![0.0; vocab];
                    d[1] = 1.0;
                    d
                } else {
                    let d = f(x, p);
                    validate(&d, vocab)?;
                    d
                };
                table.insert((encode(x, alphabet), encode(p, alphabet)), dist.into_boxed_slice());
            }
        }
        Ok(EnumerableModel { alphabet, max_prompt_len, max_len, table })
    }

    /// Random table: each row is a softmax of `sharpness`-scaled exponential
    /// logits. Larger `sharpness` gives peakier rows and wider likelihood ratios.
    pub fn random(
        alphabet: usize,
        max_prompt_len: usize,
        max_len: usize,
        sharpness: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let vocab = alphabet + 2;
        Self::from_fn(alphabet, max_prompt_len, max_len, |_, _| {
            let mut d = vec![0.0; vocab];
            for v in d.iter_mut().skip(1) {
                let u: f64 = rng.random::<f64>();
                *v = (sharpness * -(1.0 - u).ln()).exp();
            }
            let s: f64 = d.iter().sum();
            d.iter_mut().for_each(|v| *v /= s);
            d
        })
    }

    /// Replaces one row. Rows at prefix length `max_len - 1` stay EOS-only.
    pub fn set(&mut self, prompt: &[TokenId], prefix: &[TokenId], dist: Vec<f64>) -> Result<()> {
        validate(&dist, self.alphabet + 2)?;
        let key = self.key(prompt, prefix)?;
        if prefix.len() == self.max_len - 1 && (dist[1] - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::input("the last response position must emit EOS"));
        }
        self.table.insert(key, dist.into_boxed_slice());
        Ok(())
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn max_prompt_len(&self) -> usize {
        self.max_prompt_len
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Symbol ids usable in prompts and responses.
    pub fn symbols(&self) -> std::ops::Range<TokenId> {
        2..(2 + self.alphabet as TokenId)
    }

    fn key(&self, prompt: &[TokenId], prefix: &[TokenId]) -> Result<(u64, u64)> {
        let in_alphabet = |t: &TokenId| (2..2 + self.alphabet as TokenId).contains(t);
        if prompt.len() > self.max_prompt_len
            || prefix.len() >= self.max_len
            || !prompt.iter().all(in_alphabet)
            || !prefix.iter().all(in_alphabet)
        {
            return Err(Error::OutOfTable(format!("prompt {prompt:?}, prefix {prefix:?}")));
        }
        Ok((encode(prompt, self.alphabet), encode(prefix, self.alphabet)))
    }

    fn row(&self, prompt: &[TokenId], prefix: &[TokenId]) -> Result<&[f64]> {
        let key = self.key(prompt, prefix)?;
        self.table
            .get(&key)
            .map(|b| &**b)
            .ok_or_else(|| Error::OutOfTable(format!("prompt {prompt:?}, prefix {prefix:?}")))
    }
}

impl SequenceModel for EnumerableModel {
    fn vocab_size(&self) -> usize {
        self.alphabet + 2
    }

    fn bos(&self) -> TokenId {
        0
    }

    fn eos(&self) -> TokenId {
        1
    }

    fn next_distribution(&self, prompt: &[TokenId], prefix: &[TokenId], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(self.row(prompt, prefix)?);
        Ok(())
    }

    fn next_log2(&self, prompt: &[TokenId], prefix: &[TokenId], token: TokenId) -> Result<f64> {
        // Past EOS or the length cap nothing can be emitted.
        if prefix.len() >= self.max_len || prefix.contains(&1) {
            return Ok(f64::NEG_INFINITY);
        }
        let row = self.row(prompt, prefix)?;
        Ok(row.get(token as usize).copied().unwrap_or(0.0).log2())
    }
}

/// Bijective base-(alphabet+1) code of a symbol string (digits 1..=alphabet).
fn encode(tokens: &[TokenId], alphabet: usize) -> u64 {
    let base = alphabet as u64 + 1;
    tokens.iter().fold(0u64, |acc, &t| acc * base + (t as u64 - 1))
}

/// All symbol strings of length `0..=max_len`, shortest first, each length in
/// lexicographic order.
pub(crate) fn all_strings(alphabet: usize, max_len: usize) -> Vec<Vec<TokenId>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(frontier.len() * alphabet);
        for s in &frontier {
            for a in 0..alphabet as TokenId {
                let mut t = s.clone();
                t.push(2 + a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn validate(dist: &[f64], vocab: usize) -> Result<()> {
    if dist.len() != vocab {
        return Err(Error::input(format!("distribution has {} entries, expected {vocab}", dist.len())));
    }
    if dist[0] != 0.0 {
        return Err(Error::input("BOS must have zero probability"));
    }
    if dist.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::input("probabilities must lie in [0, 1]"));
    }
    let s: f64 = dist.iter().sum();
    if (s - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::input(format!("distribution sums to {s}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_strings_counts_and_order() {
        let s = all_strings(2, 2);
        assert_eq!(s.len(), 1 + 2 + 4);
        assert_eq!(s[0], Vec::<TokenId>::new());
        assert_eq!(s[1], vec![2]);
        assert_eq!(s[6], vec![3, 3]);
    }

    #[test]
    fn encoding_is_injective() {
        let strings = all_strings(3, 4);
        let mut codes: Vec<u64> = strings.iter().map(|s| encode(s, 3)).collect();
        codes.sort_unstable();
        codes.dedup();
        assert_eq!(codes.len(), strings.len());
    }

    #[test]
    fn random_table_supports_sum_to_one_for_every_prompt() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = EnumerableModel::random(3, 2, 4, 2.0, &mut rng).unwrap();
        for x in all_strings(3, 2) {
            let s = m.enumerate_support(&x, 4).unwrap();
            assert_eq!(s.truncated_mass, 0.0);
            assert!((s.total_mass() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn enumeration_agrees_with_scoring() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = EnumerableModel::random(2, 1, 5, 1.5, &mut rng).unwrap();
        for x in all_strings(2, 1) {
            for (y, p) in m.enumerate_support(&x, 5).unwrap().entries {
                let lp = m.logprob_conditional(&y, &x).unwrap().prob();
                assert!(((lp - p) / p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_table_prompts_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = EnumerableModel::random(2, 1, 3, 1.0, &mut rng).unwrap();
        assert!(matches!(m.logprob_conditional(&[2, 1], &[2, 2]), Err(Error::OutOfTable(_))));
        // Scoring past the length cap is impossible, not an error.
        assert!(m.logprob_conditional(&[2, 2, 2, 1], &[]).unwrap().is_impossible());
    }

    #[test]
    fn set_validates_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut m = EnumerableModel::random(2, 1, 3, 1.0, &mut rng).unwrap();
        assert!(m.set(&[2], &[], vec![0.0, 0.5, 0.5, 0.0]).is_ok());
        assert!(m.set(&[2], &[], vec![0.0, 0.5, 0.6, 0.0]).is_err());
        assert!(m.set(&[2], &[3, 3], vec![0.0, 0.5, 0.5, 0.0]).is_err());
        assert!((m.logprob_conditional(&[1], &[2]).unwrap().prob() - 0.5).abs() < 1e-15);
    }
}
