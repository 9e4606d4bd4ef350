//! Sequence-model contract and the concrete models used by the toolkit.
//!
//! A model is anything that can report a next-token distribution for a
//! context made of a prompt `x` and a response prefix `y_<n`. Sequence
//! likelihoods, ancestral sampling, greedy decoding and exhaustive support
//! enumeration are all derived from that single method. All log-probabilities
//! are base 2.

mod ngram;
mod simple;
mod tabular;
mod temperature;

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Deref};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ngram::{train_ngram, NGramModel};
pub use simple::{PointMassModel, UniformModel};
pub use tabular::EnumerableModel;
pub use temperature::{apply_temperature, Tempered};

pub type TokenId = u32;

/// Leaves allowed in [`SequenceModel::enumerate_support`] before it refuses.
pub const MAX_ENUMERATION_LEAVES: u64 = 10_000_000;

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawVocabulary", into = "RawVocabulary")]
pub struct Vocabulary {
    elements: Vec<String>,
    bos: TokenId,
    eos: TokenId,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct RawVocabulary {
    elements: Vec<String>,
    bos: TokenId,
    eos: TokenId,
}

impl TryFrom<RawVocabulary> for Vocabulary {
    type Error = Error;
    fn try_from(raw: RawVocabulary) -> Result<Self> {
        Vocabulary::new(raw.elements, raw.bos, raw.eos)
    }
}

impl From<Vocabulary> for RawVocabulary {
    fn from(v: Vocabulary) -> Self {
        RawVocabulary { elements: v.elements, bos: v.bos, eos: v.eos }
    }
}

impl fmt::Debug for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vocabulary")
            .field("len", &self.elements.len())
            .field("bos", &self.bos)
            .field("eos", &self.eos)
            .finish()
    }
}

impl Vocabulary {
    pub const BOS: &'static str = "<bos>";
    pub const EOS: &'static str = "<eos>";

    pub fn new(elements: Vec<String>, bos: TokenId, eos: TokenId) -> Result<Self> {
        let n = elements.len();
        if bos as usize >= n || eos as usize >= n {
            return Err(Error::input("BOS/EOS id outside the vocabulary"));
        }
        if bos == eos {
            return Err(Error::input("BOS and EOS must be distinct"));
        }
        let mut index = HashMap::with_capacity(n);
        for (i, e) in elements.iter().enumerate() {
            if index.insert(e.clone(), i as TokenId).is_some() {
                return Err(Error::input(format!("duplicate vocabulary element {e:?}")));
            }
        }
        Ok(Vocabulary { elements, bos, eos, index })
    }

    /// BOS gets id 0, EOS id 1, the symbols follow in the given order.
    pub fn with_specials<I, S>(symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut elements = vec![Self::BOS.to_string(), Self::EOS.to_string()];
        elements.extend(symbols.into_iter().map(Into::into));
        Self::new(elements, 0, 1)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    /// Number of tokens a model can emit (everything but BOS).
    pub fn support_size(&self) -> usize {
        self.elements.len() - 1
    }

    pub fn id(&self, element: &str) -> Option<TokenId> {
        self.index.get(element).copied()
    }

    pub fn element(&self, id: TokenId) -> Option<&str> {
        self.elements.get(id as usize).map(String::as_str)
    }

    pub fn elements(&self) -> &[String] {
        &self.elements
    }

    pub fn encode<S: AsRef<str>>(&self, elements: &[S]) -> Result<Sequence> {
        elements
            .iter()
            .map(|e| {
                let e = e.as_ref();
                self.id(e)
                    .ok_or_else(|| Error::input(format!("element {e:?} is not in the vocabulary")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Sequence)
    }

    pub fn decode(&self, tokens: &[TokenId]) -> Result<Vec<&str>> {
        tokens
            .iter()
            .map(|&t| {
                self.element(t)
                    .ok_or(Error::UnknownToken { id: t, size: self.len() })
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Sequence and LogProb
// ---------------------------------------------------------------------------

/// A token sequence. BOS is never stored; responses that terminated end in EOS.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sequence(pub Vec<TokenId>);

impl Sequence {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Sequence(tokens)
    }

    pub fn empty() -> Self {
        Sequence(Vec::new())
    }

    /// `N_y`: the number of scored tokens (EOS included when present).
    pub fn n_tokens(&self) -> usize {
        self.0.len()
    }

    pub fn is_terminated(&self, eos: TokenId) -> bool {
        self.0.last() == Some(&eos)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }
}

impl Deref for Sequence {
    type Target = [TokenId];
    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for Sequence {
    fn from(v: Vec<TokenId>) -> Self {
        Sequence(v)
    }
}

impl From<&[TokenId]> for Sequence {
    fn from(v: &[TokenId]) -> Self {
        Sequence(v.to_vec())
    }
}

/// Base-2 log probability. `-inf` is a legal value and propagates through sums.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogProb(pub f64);

impl LogProb {
    pub const ZERO_PROB: LogProb = LogProb(f64::NEG_INFINITY);
    pub const CERTAIN: LogProb = LogProb(0.0);

    pub fn from_prob(p: f64) -> Self {
        LogProb(p.log2())
    }

    pub fn bits(self) -> f64 {
        self.0
    }

    pub fn prob(self) -> f64 {
        self.0.exp2()
    }

    pub fn is_impossible(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }
}

impl Add for LogProb {
    type Output = LogProb;
    fn add(self, rhs: LogProb) -> LogProb {
        LogProb(self.0 + rhs.0)
    }
}

impl std::iter::Sum for LogProb {
    fn sum<I: Iterator<Item = LogProb>>(iter: I) -> LogProb {
        LogProb(iter.map(|l| l.0).sum())
    }
}

// ---------------------------------------------------------------------------
// Model contract
// ---------------------------------------------------------------------------

/// Outcome of ancestral sampling or greedy decoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub sequence: Sequence,
    /// True when `max_len` tokens were drawn without producing EOS.
    pub truncated: bool,
}

/// All terminated responses of bounded length with their exact probabilities.
#[derive(Clone, Debug)]
pub struct Support {
    pub entries: Vec<(Sequence, f64)>,
    /// Probability of reaching `max_len` tokens without EOS.
    pub truncated_mass: f64,
}

impl Support {
    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum::<f64>() + self.truncated_mass
    }
}

/// Anything exposing per-token conditional distributions.
///
/// `next_distribution` receives the prompt and the response prefix separately
/// so that tabular models can condition on the split; n-gram models simply
/// concatenate them. The BOS entry of the distribution must be zero.
pub trait SequenceModel: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn bos(&self) -> TokenId;
    fn eos(&self) -> TokenId;

    fn next_distribution(&self, prompt: &[TokenId], prefix: &[TokenId], out: &mut [f64]) -> Result<()>;

    /// `log2 l(token | prompt, prefix)`. Override when a single lookup is cheaper
    /// than materializing the whole distribution.
    fn next_log2(&self, prompt: &[TokenId], prefix: &[TokenId], token: TokenId) -> Result<f64> {
        let mut dist = vec![0.0; self.vocab_size()];
        self.next_distribution(prompt, prefix, &mut dist)?;
        Ok(dist[token as usize].log2())
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        let size = self.vocab_size();
        match tokens.iter().find(|&&t| t as usize >= size) {
            Some(&id) => Err(Error::UnknownToken { id, size }),
            None => Ok(()),
        }
    }

    /// `log2 L(y | x) = sum_n log2 l(y_n | y_<n, x)`.
    fn logprob_conditional(&self, y: &[TokenId], x: &[TokenId]) -> Result<LogProb> {
        if y.is_empty() {
            return Err(Error::input("cannot score an empty response"));
        }
        self.check_tokens(x)?;
        self.check_tokens(y)?;
        let mut total = 0.0;
        for n in 0..y.len() {
            total += self.next_log2(x, &y[..n], y[n])?;
        }
        Ok(LogProb(total))
    }

    /// `log2 G(y)`: the response scored with an empty prompt.
    fn logprob_marginal(&self, y: &[TokenId]) -> Result<LogProb> {
        self.logprob_conditional(y, &[])
    }

    /// Ancestral sampling until EOS or `max_len` tokens.
    fn sample(&self, x: &[TokenId], max_len: usize, rng: &mut dyn RngCore) -> Result<Sample> {
        if max_len == 0 {
            return Err(Error::input("max_len must be at least 1"));
        }
        self.check_tokens(x)?;
        let eos = self.eos();
        let mut dist = vec![0.0; self.vocab_size()];
        let mut out = Vec::with_capacity(max_len.min(256));
        while out.len() < max_len {
            self.next_distribution(x, &out, &mut dist)?;
            let token = draw(&dist, rng.random::<f64>());
            out.push(token);
            if token == eos {
                return Ok(Sample { sequence: Sequence(out), truncated: false });
            }
        }
        Ok(Sample { sequence: Sequence(out), truncated: true })
    }

    /// Argmax decoding; ties go to the lowest token id.
    fn greedy(&self, x: &[TokenId], max_len: usize) -> Result<Sample> {
        if max_len == 0 {
            return Err(Error::input("max_len must be at least 1"));
        }
        self.check_tokens(x)?;
        let eos = self.eos();
        let mut dist = vec![0.0; self.vocab_size()];
        let mut out = Vec::new();
        while out.len() < max_len {
            self.next_distribution(x, &out, &mut dist)?;
            let token = argmax(&dist);
            out.push(token);
            if token == eos {
                return Ok(Sample { sequence: Sequence(out), truncated: false });
            }
        }
        Ok(Sample { sequence: Sequence(out), truncated: true })
    }

    /// Every positive-probability terminated response of length `<= max_len`.
    fn enumerate_support(&self, x: &[TokenId], max_len: usize) -> Result<Support> {
        if max_len == 0 {
            return Err(Error::input("max_len must be at least 1"));
        }
        self.check_tokens(x)?;
        let branching = (self.vocab_size() - 1) as u64;
        let leaves = branching.checked_pow(max_len as u32).unwrap_or(u64::MAX);
        if leaves > MAX_ENUMERATION_LEAVES {
            return Err(Error::Resource(format!(
                "support enumeration needs up to {leaves} leaves (limit {MAX_ENUMERATION_LEAVES})"
            )));
        }
        let mut support = Support { entries: Vec::new(), truncated_mass: 0.0 };
        let mut prefix = Vec::with_capacity(max_len);
        enumerate_rec(self, x, max_len, &mut prefix, 1.0, &mut support)?;
        Ok(support)
    }
}

fn enumerate_rec<M: SequenceModel + ?Sized>(
    model: &M,
    x: &[TokenId],
    max_len: usize,
    prefix: &mut Vec<TokenId>,
    mass: f64,
    support: &mut Support,
) -> Result<()> {
    if prefix.len() == max_len {
        support.truncated_mass += mass;
        return Ok(());
    }
    let mut dist = vec![0.0; model.vocab_size()];
    model.next_distribution(x, prefix, &mut dist)?;
    let eos = model.eos();
    for (token, &p) in dist.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        prefix.push(token as TokenId);
        if token as TokenId == eos {
            support.entries.push((Sequence(prefix.clone()), mass * p));
        } else {
            enumerate_rec(model, x, max_len, prefix, mass * p, support)?;
        }
        prefix.pop();
    }
    Ok(())
}

/// Inverse-CDF draw from a probability vector with a uniform `u` in `[0, 1)`.
pub(crate) fn draw(dist: &[f64], u: f64) -> TokenId {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i as TokenId;
        }
    }
    // Rounding left u above the accumulated mass.
    last as TokenId
}

pub(crate) fn argmax(dist: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best as TokenId
}

macro_rules! forward_model {
    ($($ty:ty),*) => {$(
        impl<M: SequenceModel + ?Sized> SequenceModel for $ty {
            fn vocab_size(&self) -> usize { (**self).vocab_size() }
            fn bos(&self) -> TokenId { (**self).bos() }
            fn eos(&self) -> TokenId { (**self).eos() }
            fn next_distribution(&self, prompt: &[TokenId], prefix: &[TokenId], out: &mut [f64]) -> Result<()> {
                (**self).next_distribution(prompt, prefix, out)
            }
            fn next_log2(&self, prompt: &[TokenId], prefix: &[TokenId], token: TokenId) -> Result<f64> {
                (**self).next_log2(prompt, prefix, token)
            }
        }
    )*};
}

forward_model!(&M, Box<M>, std::sync::Arc<M>);

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vocabulary_rejects_duplicates_and_equal_specials() {
        assert!(Vocabulary::with_specials(["a", "a"]).is_err());
        assert!(Vocabulary::new(vec!["x".into(), "y".into()], 0, 0).is_err());
        assert!(Vocabulary::new(vec!["x".into()], 0, 3).is_err());
        let v = Vocabulary::with_specials(["a", "b"]).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.support_size(), 3);
        assert_eq!(v.id("b"), Some(3));
        assert_eq!(v.decode(&[2, 1]).unwrap(), vec!["a", "<eos>"]);
        assert!(v.encode(&["zz"]).is_err());
    }

    #[test]
    fn vocabulary_serde_rebuilds_index() {
        let v = Vocabulary::with_specials(["a", "b"]).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("a"), Some(2));
    }

    #[test]
    fn draw_is_inverse_cdf() {
        let d = [0.0, 0.25, 0.75];
        assert_eq!(draw(&d, 0.0), 1);
        assert_eq!(draw(&d, 0.2499), 1);
        assert_eq!(draw(&d, 0.25), 2);
        assert_eq!(draw(&d, 0.999_999_9), 2);
        assert_eq!(draw(&[0.5, 0.5 - 1e-17], 0.999_999_999_999_999_9), 1);
    }

    #[test]
    fn argmax_ties_to_lowest_id() {
        assert_eq!(argmax(&[0.0, 0.4, 0.4, 0.2]), 1);
    }

    #[test]
    fn unknown_tokens_are_input_errors() {
        let m = UniformModel::new(4).unwrap();
        let err = m.logprob_conditional(&[2, 9], &[]).unwrap_err();
        assert!(matches!(err, Error::UnknownToken { id: 9, .. }));
        assert!(m.logprob_conditional(&[2], &[7]).is_err());
        assert!(m.logprob_conditional(&[], &[]).is_err());
    }

    #[test]
    fn sample_zero_len_is_error_and_truncation_is_flagged() {
        let m = UniformModel::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(m.sample(&[], 0, &mut rng).is_err());
        let point = PointMassModel::new(5, Sequence(vec![2, 3, 4, 1])).unwrap();
        let s = point.sample(&[], 2, &mut rng).unwrap();
        assert!(s.truncated);
        assert_eq!(s.sequence.tokens(), &[2, 3]);
    }

    #[test]
    fn enumeration_guard_trips() {
        let m = UniformModel::new(20).unwrap();
        assert!(matches!(m.enumerate_support(&[], 8), Err(Error::Resource(_))));
    }
}
