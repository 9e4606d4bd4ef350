use super::{SequenceModel, TokenId};
use crate::error::{Error, Result};

/// Rescales per-token logits by `1 / t` and renormalizes. `t = 1` is an exact
/// pass-through; zero-probability tokens stay at zero.
#[derive(Clone, Debug)]
pub struct Tempered<M> {
    inner: M,
    temperature: f64,
}

pub fn apply_temperature<M: SequenceModel>(model: M, temperature: f64) -> Result<Tempered<M>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::input(format!("temperature must be positive, got {temperature}")));
    }
    Ok(Tempered { inner: model, temperature })
}

impl<M> Tempered<M> {
    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

fn rescale(dist: &mut [f64], t: f64) {
    let inv = 1.0 / t;
    let max_log = dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for p in dist.iter_mut() {
        if *p > 0.0 {
            *p = ((p.ln() - max_log) * inv).exp();
            total += *p;
        }
    }
    dist.iter_mut().for_each(|p| *p /= total);
}

impl<M: SequenceModel> SequenceModel for Tempered<M> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn bos(&self) -> TokenId {
        self.inner.bos()
    }

    fn eos(&self) -> TokenId {
        self.inner.eos()
    }

    fn next_distribution(&self, prompt: &[TokenId], prefix: &[TokenId], out: &mut [f64]) -> Result<()> {
        self.inner.next_distribution(prompt, prefix, out)?;
        if self.temperature != 1.0 {
            rescale(out, self.temperature);
        }
        Ok(())
    }

    fn next_log2(&self, prompt: &[TokenId], prefix: &[TokenId], token: TokenId) -> Result<f64> {
        if self.temperature == 1.0 {
            return self.inner.next_log2(prompt, prefix, token);
        }
        let mut dist = vec![0.0; self.vocab_size()];
        self.next_distribution(prompt, prefix, &mut dist)?;
        Ok(dist[token as usize].log2())
    }
}
