use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::model::{Sequence, SequenceModel, TokenId};
use crate::valid::acceptance_test;

/// `(1 - phi^T) / (1 - phi)`, the factor by which accepted responses gain
/// probability under the meta-model; `T` at `phi = 1`.
pub fn multiplier(phi: f64, t: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::input(format!("phi must lie in [0, 1], got {phi}")));
    }
    if t == 0 {
        return Err(Error::input("T must be at least 1"));
    }
    if phi == 1.0 {
        return Ok(t as f64);
    }
    // expm1/ln_1p keep precision when phi is close to 1
    let d = phi - 1.0;
    Ok((t as f64 * d.ln_1p()).exp_m1() / d)
}

/// Expected number of proposals drawn by one run.
pub fn expected_iterations(phi: f64, t: usize) -> Result<f64> {
    multiplier(phi, t)
}

/// How `L(.|x)` splits between accepted and rejected responses.
#[derive(Clone, Debug, PartialEq)]
pub struct RejectionProfile {
    /// Probability that one proposal is rejected, truncated draws included.
    pub phi: f64,
    pub accepted_mass: f64,
    pub truncated_mass: f64,
    /// Accepted responses with `L(y|x)`.
    pub accepted: Vec<(Sequence, f64)>,
}

/// Exact profile by enumerating every response of at most `max_len` tokens.
/// Mass that does not terminate within `max_len` counts as rejected.
pub fn rejection_profile<L, G>(l: &L, g: &G, k: f64, x: &[TokenId], max_len: usize) -> Result<RejectionProfile>
where
    L: SequenceModel + ?Sized,
    G: SequenceModel + ?Sized,
{
    let support = l.enumerate_support(x, max_len)?;
    let classified = exec::try_map(&support.entries, |(y, p)| -> Result<(bool, f64)> {
        let log_l = l.logprob_conditional(y, x)?;
        let log_g = g.logprob_marginal(y)?;
        Ok((acceptance_test(log_l, log_g, y.n_tokens(), k), *p))
    })?;
    let mut profile = RejectionProfile {
        phi: support.truncated_mass,
        accepted_mass: 0.0,
        truncated_mass: support.truncated_mass,
        accepted: Vec::new(),
    };
    for ((y, _), (ok, p)) in support.entries.into_iter().zip(classified) {
        if ok {
            profile.accepted_mass += p;
            profile.accepted.push((y, p));
        } else {
            profile.phi += p;
        }
    }
    profile.phi = profile.phi.clamp(0.0, 1.0);
    Ok(profile)
}

/// The full output distribution of the meta-model for one prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MDistribution {
    pub phi: f64,
    pub multiplier: f64,
    /// `M(Abstain|x) = phi^T`.
    pub abstain: f64,
    pub entries: Vec<(Sequence, f64)>,
}

impl MDistribution {
    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum::<f64>() + self.abstain
    }

    pub fn index(&self) -> HashMap<&Sequence, f64> {
        self.entries.iter().map(|(y, p)| (y, *p)).collect()
    }
}

pub fn m_distribution<L, G>(l: &L, g: &G, k: f64, t: usize, x: &[TokenId], max_len: usize) -> Result<MDistribution>
where
    L: SequenceModel + ?Sized,
    G: SequenceModel + ?Sized,
{
    let profile = rejection_profile(l, g, k, x, max_len)?;
    let mult = multiplier(profile.phi, t)?;
    Ok(MDistribution {
        phi: profile.phi,
        multiplier: mult,
        abstain: profile.phi.powi(t as i32),
        entries: profile.accepted.into_iter().map(|(y, p)| (y, p * mult)).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MLikelihood {
    /// `M(y|x)`.
    pub m: f64,
    pub accepted: bool,
    pub phi: f64,
    /// `M(Abstain|x)`.
    pub abstain: f64,
}

/// Exact `M(y|x)`: `L(y|x)` times the multiplier when `y` passes the
/// acceptance test, zero otherwise.
pub fn likelihood_m_exact<L, G>(
    l: &L,
    g: &G,
    k: f64,
    t: usize,
    x: &[TokenId],
    y: &[TokenId],
    max_len: usize,
) -> Result<MLikelihood>
where
    L: SequenceModel + ?Sized,
    G: SequenceModel + ?Sized,
{
    let profile = rejection_profile(l, g, k, x, max_len)?;
    let abstain = profile.phi.powi(t as i32);
    let reachable = !y.is_empty() && y.len() <= max_len && y.last() == Some(&l.eos());
    let log_l = l.logprob_conditional(y, x)?;
    let accepted = reachable && !log_l.is_impossible() && acceptance_test(log_l, g.logprob_marginal(y)?, y.len(), k);
    let m = if accepted { log_l.prob() * multiplier(profile.phi, t)? } else { 0.0 };
    Ok(MLikelihood { m, accepted, phi: profile.phi, abstain })
}
