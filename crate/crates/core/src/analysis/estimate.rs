use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::exec;
use crate::model::{LogProb, SequenceModel, TokenId};
use crate::valid::acceptance_test;

use super::likelihood::multiplier;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// `phi_hat +- z sqrt(phi_hat (1 - phi_hat) / n)`, clipped to [0, 1].
    #[default]
    Normal,
    /// Exact binomial interval; reliable for small `n` and `phi` near 0 or 1.
    ClopperPearson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectionEstimate {
    pub phi_hat: f64,
    pub n: u64,
    pub rejections: u64,
    pub confidence: f64,
    pub method: CiMethod,
    pub lo: f64,
    pub hi: f64,
}

impl RejectionEstimate {
    pub fn from_counts(rejections: u64, n: u64, confidence: f64, method: CiMethod) -> Result<Self> {
        if n == 0 || rejections > n {
            return Err(Error::input(format!("invalid counts {rejections}/{n}")));
        }
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(Error::input(format!("confidence must lie in (0, 1), got {confidence}")));
        }
        let phi_hat = rejections as f64 / n as f64;
        let alpha = 1.0 - confidence;
        let (lo, hi) = match method {
            CiMethod::Normal => {
                let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
                let half = z * (phi_hat * (1.0 - phi_hat) / n as f64).sqrt();
                ((phi_hat - half).max(0.0), (phi_hat + half).min(1.0))
            }
            CiMethod::ClopperPearson => {
                let (r, n) = (rejections as f64, n as f64);
                let lo = if rejections == 0 { 0.0 } else { beta(r, n - r + 1.0)?.inverse_cdf(alpha / 2.0) };
                let hi = if r == n { 1.0 } else { beta(r + 1.0, n - r)?.inverse_cdf(1.0 - alpha / 2.0) };
                (lo.min(phi_hat), hi.max(phi_hat))
            }
        };
        Ok(RejectionEstimate { phi_hat, n, rejections, confidence, method, lo, hi })
    }
}

fn beta(a: f64, b: f64) -> Result<Beta> {
    Beta::new(a, b).map_err(|e| Error::input(format!("beta({a}, {b}): {e}")))
}

const MC_CHUNK: u64 = 8192;

/// Monte Carlo estimate of the per-proposal rejection probability `phi` from
/// `n` draws of `L(.|x)`. Truncated draws count as rejections.
#[allow(clippy::too_many_arguments)]
pub fn rejection_prob_mc<L, G>(
    l: &L,
    g: &G,
    k: f64,
    x: &[TokenId],
    n: u64,
    confidence: f64,
    method: CiMethod,
    max_len: usize,
    seed: u64,
) -> Result<RejectionEstimate>
where
    L: SequenceModel + ?Sized,
    G: SequenceModel + ?Sized,
{
    if n == 0 {
        return Err(Error::input("need at least one draw"));
    }
    let chunks = n.div_ceil(MC_CHUNK) as usize;
    let counts = exec::map_range(chunks, |c| -> Result<u64> {
        let mut rng = exec::stream_rng(seed, c as u64);
        let len = MC_CHUNK.min(n - c as u64 * MC_CHUNK);
        let mut rejected = 0;
        for _ in 0..len {
            let s = l.sample(x, max_len, &mut rng)?;
            let ok = !s.truncated
                && acceptance_test(
                    l.logprob_conditional(&s.sequence, x)?,
                    g.logprob_marginal(&s.sequence)?,
                    s.sequence.n_tokens(),
                    k,
                );
            rejected += u64::from(!ok);
        }
        Ok(rejected)
    });
    let mut rejections = 0;
    for c in counts {
        rejections += c?;
    }
    RejectionEstimate::from_counts(rejections, n, confidence, method)
}

/// Interval for `M(y|x)` implied by a confidence interval on `phi`; the
/// multiplier is increasing in `phi`. A rejected response gives `[0, 0]`.
pub fn likelihood_m_bounds(log_l: LogProb, est: &RejectionEstimate, t: usize, accepted: bool) -> Result<(f64, f64)> {
    if !accepted {
        return Ok((0.0, 0.0));
    }
    let l = log_l.prob();
    Ok((l * multiplier(est.lo, t)?, l * multiplier(est.hi, t)?))
}
