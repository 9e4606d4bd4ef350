//! Exhaustive prompt search against a response: the unconstrained maximizer
//! of `L(y|x)` and the maximizer of the meta-model likelihood restricted to
//! prompts where `y` is accepted.

use serde::{Deserialize, Serialize};

use crate::analysis::{multiplier, rejection_profile};
use crate::certificates::AtomicCertificate;
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{Sequence, SequenceModel, TokenId};
use crate::valid::acceptance_test;

/// Largest prompt space searched before giving up with a resource error.
pub const MAX_PROMPTS: u64 = 2_000_000;

pub const DEFAULT_PROMPT_LEN: usize = 3;

/// Relative slack allowed when comparing an attack value to its certificate.
pub const BOUND_REL_TOL: f64 = 1e-12;

/// Every sequence of at most `max_len` tokens over `symbols`, the empty
/// prompt included.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpace {
    pub symbols: Vec<TokenId>,
    pub max_len: usize,
}

impl PromptSpace {
    pub fn new(mut symbols: Vec<TokenId>, max_len: usize) -> Self {
        symbols.sort_unstable();
        symbols.dedup();
        PromptSpace { symbols, max_len }
    }

    /// All non-special tokens of `model`.
    pub fn for_model<M: SequenceModel + ?Sized>(model: &M, max_len: usize) -> Self {
        let symbols = (0..model.vocab_size() as TokenId).filter(|&t| t != model.bos() && t != model.eos()).collect();
        PromptSpace::new(symbols, max_len)
    }

    pub fn size(&self) -> u64 {
        let s = self.symbols.len() as u64;
        let mut total: u64 = 0;
        let mut layer: u64 = 1;
        for _ in 0..=self.max_len {
            total = total.saturating_add(layer);
            layer = layer.saturating_mul(s);
        }
        total
    }

    /// Prompts in lexicographic order.
    pub fn prompts(&self) -> Result<Vec<Sequence>> {
        let size = self.size();
        if size > MAX_PROMPTS {
            return Err(Error::Resource(format!("prompt space has {size} prompts (limit {MAX_PROMPTS})")));
        }
        let mut out = Vec::with_capacity(size as usize);
        let mut stack = vec![Vec::new()];
        while let Some(p) = stack.pop() {
            if p.len() < self.max_len {
                for &s in self.symbols.iter().rev() {
                    let mut q = p.clone();
                    q.push(s);
                    stack.push(q);
                }
            }
            out.push(Sequence(p));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adversary {
    pub x: Sequence,
    /// Likelihood of the target at `x` (under `L` or under the meta-model).
    pub value: f64,
}

fn first_max(prompts: &[Sequence], values: &[f64]) -> Option<Adversary> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.map_or(true, |b| *v > values[b]) {
            best = Some(i);
        }
    }
    best.map(|i| Adversary { x: prompts[i].clone(), value: values[i] })
}

/// `argmax_x L(y|x)`; ties go to the lexicographically smallest prompt.
pub fn find_adversary_l<L>(l: &L, y: &[TokenId], space: &PromptSpace) -> Result<Adversary>
where
    L: SequenceModel + ?Sized,
{
    let prompts = space.prompts()?;
    let values = exec::try_map(&prompts, |x| Ok::<_, Error>(l.logprob_conditional(y, x)?.prob()))?;
    first_max(&prompts, &values).ok_or_else(|| Error::input("prompt space is empty"))
}

/// Per-prompt rejection multipliers, shared across targets.
struct AttackContext {
    prompts: Vec<Sequence>,
    multipliers: Vec<f64>,
}

impl AttackContext {
    fn build<L, G>(l: &L, g: &G, k: f64, t: usize, space: &PromptSpace, max_len: usize) -> Result<Self>
    where
        L: SequenceModel + ?Sized,
        G: SequenceModel + ?Sized,
    {
        let prompts = space.prompts()?;
        let multipliers = exec::try_map(&prompts, |x| multiplier(rejection_profile(l, g, k, x, max_len)?.phi, t))?;
        Ok(AttackContext { prompts, multipliers })
    }

    fn attack<L, G>(&self, l: &L, g: &G, k: f64, y: &[TokenId]) -> Result<(Adversary, Option<Adversary>)>
    where
        L: SequenceModel + ?Sized,
        G: SequenceModel + ?Sized,
    {
        let log_g = g.logprob_marginal(y)?;
        let scored = exec::try_map(&self.prompts, |x| -> Result<(f64, bool)> {
            let log_l = l.logprob_conditional(y, x)?;
            Ok((log_l.prob(), !log_l.is_impossible() && acceptance_test(log_l, log_g, y.len(), k)))
        })?;
        let l_values: Vec<f64> = scored.iter().map(|s| s.0).collect();
        let m_values: Vec<f64> =
            scored.iter().zip(&self.multipliers).map(|(&(p, ok), m)| if ok { p * m } else { f64::NAN }).collect();
        let adv_l = first_max(&self.prompts, &l_values).ok_or_else(|| Error::input("prompt space is empty"))?;
        Ok((adv_l, first_max(&self.prompts, &m_values)))
    }
}

fn check_target<L: SequenceModel + ?Sized>(l: &L, y: &[TokenId], max_len: usize) -> Result<()> {
    if y.is_empty() || y.len() > max_len || y.last() != Some(&l.eos()) {
        return Err(Error::input(format!("target must end in EOS within {max_len} tokens")));
    }
    Ok(())
}

/// Prompt maximizing the exact meta-model likelihood of `y` among prompts
/// under which `y` is accepted; `None` when no prompt accepts it.
#[allow(clippy::too_many_arguments)]
pub fn find_adversary_m<L, G>(
    l: &L,
    g: &G,
    k: f64,
    t: usize,
    y: &[TokenId],
    space: &PromptSpace,
    max_len: usize,
) -> Result<Option<Adversary>>
where
    L: SequenceModel + ?Sized,
    G: SequenceModel + ?Sized,
{
    check_target(l, y, max_len)?;
    let ctx = AttackContext::build(l, g, k, t, space, max_len)?;
    Ok(ctx.attack(l, g, k, y)?.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub target: Sequence,
    pub x_adv_l: Sequence,
    pub l_value: f64,
    pub x_adv_m: Option<Sequence>,
    /// Zero when no prompt accepts the target.
    pub m_value: f64,
    pub log2_eps: f64,
    /// The unconstrained attack on `L` beats the certificate of `M`.
    pub l_exceeds_certificate: bool,
    pub violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub k: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub prompts_searched: usize,
    pub violations: usize,
    pub reports: Vec<AttackReport>,
}

impl AttackSummary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn exceeds(value: f64, log2_eps: f64) -> bool {
    value > log2_eps.exp2() * (1.0 + BOUND_REL_TOL)
}

/// Runs both adversaries for every target and compares the constrained one
/// against the atomic certificate.
#[allow(clippy::too_many_arguments)]
pub fn verify_bound_under_attack<L, G>(
    l: &L,
    g: &G,
    k: f64,
    t: usize,
    targets: &[Sequence],
    space: &PromptSpace,
    max_len: usize,
) -> Result<AttackSummary>
where
    L: SequenceModel + ?Sized,
    G: SequenceModel + ?Sized,
{
    for y in targets {
        check_target(l, y, max_len)?;
    }
    let ctx = AttackContext::build(l, g, k, t, space, max_len)?;
    let reports = exec::try_map(targets, |y| -> Result<AttackReport> {
        let (adv_l, adv_m) = ctx.attack(l, g, k, y)?;
        let cert = AtomicCertificate::from_parts(k, t, y.len(), g.logprob_marginal(y)?.bits())?;
        let m_value = adv_m.as_ref().map_or(0.0, |a| a.value);
        Ok(AttackReport {
            target: y.clone(),
            l_exceeds_certificate: exceeds(adv_l.value, cert.log2_eps),
            x_adv_l: adv_l.x,
            l_value: adv_l.value,
            x_adv_m: adv_m.map(|a| a.x),
            m_value,
            log2_eps: cert.log2_eps,
            violated: exceeds(m_value, cert.log2_eps),
        })
    })?;
    let violations = reports.iter().filter(|r| r.violated).count();
    if violations > 0 {
        log::error!("{violations} targets exceed their certificate under attack");
    }
    Ok(AttackSummary { k, t, prompts_searched: ctx.prompts.len(), violations, reports })
}
