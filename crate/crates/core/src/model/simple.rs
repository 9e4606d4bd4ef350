use super::{Sequence, SequenceModel, TokenId};
use crate::error::{Error, Result};

/// Every emittable token (EOS included) has probability `1 / support`.
///
/// Ids: BOS = 0, EOS = 1, symbols `2..=support`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformModel {
    support: usize,
}

impl UniformModel {
    pub fn new(support: usize) -> Result<Self> {
        if support < 1 {
            return Err(Error::input("uniform model needs at least one emittable token"));
        }
        Ok(UniformModel { support })
    }

    pub fn per_token_prob(&self) -> f64 {
        1.0 / self.support as f64
    }
}

impl SequenceModel for UniformModel {
    fn vocab_size(&self) -> usize {
        self.support + 1
    }

    fn bos(&self) -> TokenId {
        0
    }

    fn eos(&self) -> TokenId {
        1
    }

    fn next_distribution(&self, _prompt: &[TokenId], _prefix: &[TokenId], out: &mut [f64]) -> Result<()> {
        out.fill(self.per_token_prob());
        out[0] = 0.0;
        Ok(())
    }

    fn next_log2(&self, _prompt: &[TokenId], _prefix: &[TokenId], token: TokenId) -> Result<f64> {
        Ok(if token == 0 { f64::NEG_INFINITY } else { self.per_token_prob().log2() })
    }
}

/// Emits one fixed terminated sequence regardless of the prompt.
///
/// Off the target path the model puts all mass on EOS so that every context
/// still has a proper distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMassModel {
    vocab_size: usize,
    target: Sequence,
}

impl PointMassModel {
    pub fn new(vocab_size: usize, target: Sequence) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::input("point-mass model needs BOS and EOS"));
        }
        if !target.is_terminated(1) {
            return Err(Error::input("point-mass target must end in EOS"));
        }
        if target.iter().any(|&t| t == 0 || t as usize >= vocab_size) {
            return Err(Error::input("point-mass target contains BOS or unknown tokens"));
        }
        Ok(PointMassModel { vocab_size, target })
    }

    pub fn target(&self) -> &Sequence {
        &self.target
    }
}

impl SequenceModel for PointMassModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn bos(&self) -> TokenId {
        0
    }

    fn eos(&self) -> TokenId {
        1
    }

    fn next_distribution(&self, _prompt: &[TokenId], prefix: &[TokenId], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        let on_path = prefix.len() < self.target.len() && self.target.starts_with(prefix);
        let next = if on_path { self.target[prefix.len()] } else { 1 };
        out[next as usize] = 1.0;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_per_token_scores() {
        let l = UniformModel::new(10).unwrap();
        let got = l.logprob_conditional(&[2, 3, 4], &[5]).unwrap().bits();
        assert!((got - 3.0 * 0.1f64.log2()).abs() < 1e-12);
        assert!((got - (-9.9658)).abs() < 1e-4);
        let g = UniformModel::new(20).unwrap();
        let got = g.logprob_marginal(&[2, 3, 4]).unwrap().bits();
        assert!((got - 3.0 * 0.05f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn eos_only_with_certain_eos_scores_zero() {
        let m = UniformModel::new(1).unwrap();
        assert_eq!(m.logprob_conditional(&[1], &[]).unwrap().bits(), 0.0);
    }

    #[test]
    fn point_mass_behaviour() {
        let y = Sequence(vec![2, 3, 1]);
        let m = PointMassModel::new(4, y.clone()).unwrap();
        assert_eq!(m.logprob_marginal(&y).unwrap().bits(), 0.0);
        assert_eq!(m.logprob_conditional(&y, &[3, 3]).unwrap().bits(), 0.0);
        assert!(m.logprob_marginal(&[3, 1]).unwrap().is_impossible());
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(m.sample(&[2], 10, &mut rng).unwrap().sequence, y);
        }
        let support = m.enumerate_support(&[], 4).unwrap();
        assert_eq!(support.entries, vec![(y, 1.0)]);
        assert!(PointMassModel::new(4, Sequence(vec![2, 3])).is_err());
    }
}
