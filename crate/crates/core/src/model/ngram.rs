use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Sequence, SequenceModel, TokenId, Vocabulary};
use crate::error::{Error, Result};

const FORMAT_NAME: &str = "domcert-ngram";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    /// Sorted by token id.
    next: Vec<(TokenId, u64)>,
}

impl ContextCounts {
    fn count(&self, token: TokenId) -> u64 {
        self.next
            .binary_search_by_key(&token, |&(t, _)| t)
            .map(|i| self.next[i].1)
            .unwrap_or(0)
    }
}

/// Add-α smoothed n-gram model over a fixed vocabulary.
///
/// `P(t | ctx) = (count(ctx, t) + α) / (count(ctx) + α·S)` where `S` is the
/// number of emittable tokens (the vocabulary minus BOS). Contexts are the
/// last `order - 1` tokens of the BOS-padded history.
#[derive(Clone, Debug, PartialEq)]
pub struct NGramModel {
    vocab: Vocabulary,
    order: usize,
    alpha: f64,
    contexts: HashMap<Vec<TokenId>, ContextCounts>,
}

/// Counts next-token events over `corpus` with `order - 1` BOS tokens of
/// left padding. Sequences are counted as given: append EOS beforehand if the
/// model should learn to stop.
pub fn train_ngram(vocab: &Vocabulary, corpus: &[Sequence], order: usize, alpha: f64) -> Result<NGramModel> {
    if corpus.is_empty() {
        return Err(Error::input("training corpus is empty"));
    }
    if order == 0 {
        return Err(Error::input("n-gram order must be at least 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::input(format!("smoothing constant must be positive, got {alpha}")));
    }
    let bos = vocab.bos();
    let mut raw: HashMap<Vec<TokenId>, HashMap<TokenId, u64>> = HashMap::new();
    let mut history: Vec<TokenId> = Vec::new();
    for seq in corpus {
        if let Some(&id) = seq.iter().find(|&&t| t as usize >= vocab.len() || t == bos) {
            return Err(Error::input(format!("corpus token {id} is BOS or outside the vocabulary")));
        }
        history.clear();
        history.resize(order - 1, bos);
        for &t in seq.iter() {
            let ctx = history[history.len() - (order - 1)..].to_vec();
            *raw.entry(ctx).or_default().entry(t).or_insert(0) += 1;
            history.push(t);
        }
    }
    let contexts = raw
        .into_iter()
        .map(|(ctx, next)| {
            let mut next: Vec<(TokenId, u64)> = next.into_iter().collect();
            next.sort_unstable();
            let total = next.iter().map(|&(_, c)| c).sum();
            (ctx, ContextCounts { total, next })
        })
        .collect();
    Ok(NGramModel { vocab: vocab.clone(), order, alpha, contexts })
}

impl NGramModel {
    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.len()
    }

    fn context_of(&self, prompt: &[TokenId], prefix: &[TokenId]) -> Vec<TokenId> {
        let need = self.order - 1;
        let mut ctx = Vec::with_capacity(need);
        let history = prompt.iter().chain(prefix.iter());
        let available = prompt.len() + prefix.len();
        let pad = need.saturating_sub(available);
        ctx.resize(pad, self.vocab.bos());
        ctx.extend(history.skip(available.saturating_sub(need)));
        ctx
    }

    fn lookup(&self, prompt: &[TokenId], prefix: &[TokenId]) -> Option<&ContextCounts> {
        if self.order == 1 {
            return self.contexts.get(&[][..]);
        }
        self.contexts.get(&self.context_of(prompt, prefix))
    }

    fn denominator(&self, counts: Option<&ContextCounts>) -> f64 {
        counts.map_or(0, |c| c.total) as f64 + self.alpha * self.vocab.support_size() as f64
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Canonical serialization: contexts sorted, so equal models give equal bytes.
    pub fn to_json(&self) -> Result<String> {
        let mut contexts: Vec<ContextFile> = self
            .contexts
            .iter()
            .map(|(ctx, c)| ContextFile { context: ctx.clone(), counts: c.next.clone() })
            .collect();
        contexts.sort_by(|a, b| a.context.cmp(&b.context));
        let file = ModelFile {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            order: self.order,
            alpha: self.alpha,
            vocabulary: self.vocab.clone(),
            contexts,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != FORMAT_NAME {
            return Err(Error::Format(format!("expected format {FORMAT_NAME:?}, got {:?}", file.format)));
        }
        if file.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", file.version)));
        }
        if file.order == 0 || !(file.alpha.is_finite() && file.alpha > 0.0) {
            return Err(Error::Format("order must be >= 1 and alpha > 0".into()));
        }
        let v = file.vocabulary.len();
        let mut contexts = HashMap::with_capacity(file.contexts.len());
        for c in file.contexts {
            if c.context.len() != file.order - 1 {
                return Err(Error::Format("context length does not match the order".into()));
            }
            let sorted = c.counts.windows(2).all(|w| w[0].0 < w[1].0);
            let in_vocab = |t: TokenId| (t as usize) < v;
            if !sorted || !c.counts.iter().all(|&(t, _)| in_vocab(t)) || !c.context.iter().all(|&t| in_vocab(t)) {
                return Err(Error::Format("context counts unsorted or out of vocabulary".into()));
            }
            let total = c.counts.iter().map(|&(_, n)| n).sum();
            contexts.insert(c.context, ContextCounts { total, next: c.counts });
        }
        Ok(NGramModel { vocab: file.vocabulary, order: file.order, alpha: file.alpha, contexts })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    order: usize,
    alpha: f64,
    vocabulary: Vocabulary,
    contexts: Vec<ContextFile>,
}

#[derive(Serialize, Deserialize)]
struct ContextFile {
    context: Vec<TokenId>,
    counts: Vec<(TokenId, u64)>,
}

impl SequenceModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn bos(&self) -> TokenId {
        self.vocab.bos()
    }

    fn eos(&self) -> TokenId {
        self.vocab.eos()
    }

    fn next_distribution(&self, prompt: &[TokenId], prefix: &[TokenId], out: &mut [f64]) -> Result<()> {
        let counts = self.lookup(prompt, prefix);
        let denom = self.denominator(counts);
        out.fill(self.alpha / denom);
        if let Some(c) = counts {
            for &(t, n) in &c.next {
                out[t as usize] = (n as f64 + self.alpha) / denom;
            }
        }
        out[self.vocab.bos() as usize] = 0.0;
        Ok(())
    }

    fn next_log2(&self, prompt: &[TokenId], prefix: &[TokenId], token: TokenId) -> Result<f64> {
        if token == self.vocab.bos() {
            return Ok(f64::NEG_INFINITY);
        }
        let counts = self.lookup(prompt, prefix);
        let n = counts.map_or(0, |c| c.count(token));
        Ok(((n as f64 + self.alpha) / self.denominator(counts)).log2())
    }
}
