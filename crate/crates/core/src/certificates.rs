//! Atomic and domain certificates, their inversion for `k`, constriction
//! ratios and the order-infinity Rényi divergence.
//!
//! Everything is kept in bits (`log2`). A linear epsilon is produced only for
//! display, see [`display_probability`].

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec;
use crate::model::{LogProb, Sequence, SequenceModel, TokenId};

/// Smallest positive normal `f64` exponent; below it linear values are shown
/// as underflowed.
pub const MIN_NORMAL_LOG2: f64 = -1022.0;

/// Upper bound `eps_y` on `M(y|x)` over all prompts:
/// `log2_eps = k N_y + log2 T + log2 G(y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomicCertificate {
    pub k: f64,
    pub t: usize,
    pub n_y: usize,
    pub log2_g: f64,
    pub log2_eps: f64,
}

impl AtomicCertificate {
    pub fn from_parts(k: f64, t: usize, n_y: usize, log2_g: f64) -> Result<Self> {
        if t == 0 {
            return Err(Error::input("T must be at least 1"));
        }
        let log2_eps = k * n_y as f64 + (t as f64).log2() + log2_g;
        Ok(AtomicCertificate { k, t, n_y, log2_g, log2_eps })
    }

    pub fn eps(&self) -> f64 {
        self.log2_eps.exp2()
    }
}

pub fn atomic_certificate<G>(g: &G, y: &[TokenId], k: f64, t: usize) -> Result<AtomicCertificate>
where
    G: SequenceModel + ?Sized,
{
    let log2_g = g.logprob_marginal(y)?;
    AtomicCertificate::from_parts(k, t, y.len(), log2_g.bits())
}

/// A response in the forbidden set, identified for witness reporting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertItem {
    pub id: String,
    pub y: Sequence,
}

impl CertItem {
    pub fn new(id: impl Into<String>, y: impl Into<Sequence>) -> Self {
        CertItem { id: id.into(), y: y.into() }
    }
}

/// `log2 G(y)` for one forbidden item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuideScore {
    pub id: String,
    pub n_y: usize,
    pub log2_g: f64,
}

pub fn guide_scores<G>(g: &G, items: &[CertItem]) -> Result<Vec<GuideScore>>
where
    G: SequenceModel + ?Sized,
{
    exec::try_map(items, |it| {
        if it.y.is_empty() {
            return Err(Error::input(format!("item {} has an empty response", it.id)));
        }
        Ok(GuideScore { id: it.id.clone(), n_y: it.y.n_tokens(), log2_g: g.logprob_marginal(&it.y)?.bits() })
    })
}

/// SHA-256 over the items sorted by id and tokens; independent of input order.
pub fn dataset_fingerprint(items: &[CertItem]) -> String {
    let mut sorted: Vec<&CertItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id).then_with(|| a.y.0.cmp(&b.y.0)));
    let mut h = Sha256::new();
    for it in sorted {
        h.update((it.id.len() as u64).to_le_bytes());
        h.update(it.id.as_bytes());
        h.update((it.y.len() as u64).to_le_bytes());
        for t in it.y.iter() {
            h.update(t.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainCertificate {
    pub k: f64,
    pub t: usize,
    pub log2_eps: f64,
    pub witness_id: String,
    pub witness: AtomicCertificate,
    pub dataset_fingerprint: String,
    pub robust_quantile: f64,
    pub n_items: usize,
}

impl DomainCertificate {
    pub fn report(&self) -> CertificateReport {
        CertificateReport::new(self)
    }
}

fn check_quantile(q: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::input(format!("robust quantile must lie in (0, 1], got {q}")));
    }
    Ok(())
}

/// 0-based index of the type-1 (inverse eCDF) `q`-quantile among `n` sorted values.
pub(crate) fn quantile_index(q: f64, n: usize) -> usize {
    ((q * n as f64).ceil() as usize).clamp(1, n) - 1
}

/// Domain certificate from precomputed guide scores. With `robust_quantile`
/// 1.0 this is the maximum atomic certificate; smaller values take the
/// corresponding order statistic instead. Ties go to the lowest id.
pub fn domain_certificate_from_scores(
    scores: &[GuideScore],
    k: f64,
    t: usize,
    robust_quantile: f64,
    dataset_fingerprint: String,
) -> Result<DomainCertificate> {
    if scores.is_empty() {
        return Err(Error::input("forbidden set is empty"));
    }
    check_quantile(robust_quantile)?;
    let atomics = exec::try_map(scores, |s| AtomicCertificate::from_parts(k, t, s.n_y, s.log2_g))?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // ascending certificate; among equal certificates the lowest id sorts last
    order.sort_by(|&a, &b| {
        atomics[a].log2_eps.total_cmp(&atomics[b].log2_eps).then_with(|| scores[b].id.cmp(&scores[a].id))
    });
    let pick = order[quantile_index(robust_quantile, scores.len())];
    Ok(DomainCertificate {
        k,
        t,
        log2_eps: atomics[pick].log2_eps,
        witness_id: scores[pick].id.clone(),
        witness: atomics[pick].clone(),
        dataset_fingerprint,
        robust_quantile,
        n_items: scores.len(),
    })
}

pub fn domain_certificate<G>(g: &G, d_f: &[CertItem], k: f64, t: usize, robust_quantile: f64) -> Result<DomainCertificate>
where
    G: SequenceModel + ?Sized,
{
    if d_f.is_empty() {
        return Err(Error::input("forbidden set is empty"));
    }
    let scores = guide_scores(g, d_f)?;
    domain_certificate_from_scores(&scores, k, t, robust_quantile, dataset_fingerprint(d_f))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolvedK {
    pub k: f64,
    /// Id of the item whose certificate equals the target at this `k`.
    pub binding_id: String,
    pub below_floor: bool,
}

/// Largest `k` whose domain certificate is at most `log2_eps`.
///
/// Item `y` alone allows `k_y = (log2 eps - log2 T - log2 G(y)) / N_y`. The
/// `q`-quantile certificate is within target exactly when enough items have
/// `k_y >= k`, so the answer is an order statistic of the `k_y` (the minimum
/// for `q = 1`).
pub fn solve_k_for_log2_epsilon(
    scores: &[GuideScore],
    t: usize,
    log2_eps: f64,
    robust_quantile: f64,
    k_floor: f64,
) -> Result<SolvedK> {
    if scores.is_empty() {
        return Err(Error::input("forbidden set is empty"));
    }
    if t == 0 {
        return Err(Error::input("T must be at least 1"));
    }
    if log2_eps.is_nan() || log2_eps > 0.0 {
        return Err(Error::input(format!("epsilon must lie in (0, 1], got 2^{log2_eps}")));
    }
    check_quantile(robust_quantile)?;
    let log2_t = (t as f64).log2();
    let mut ks: Vec<(f64, &str)> =
        scores.iter().map(|s| ((log2_eps - log2_t - s.log2_g) / s.n_y as f64, s.id.as_str())).collect();
    // descending k; ties to the lowest id
    ks.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let (k, id) = ks[quantile_index(robust_quantile, ks.len())];
    let below_floor = k < k_floor;
    if below_floor {
        log::warn!("k = {k} bits/token for log2 eps = {log2_eps} lies below the floor {k_floor}");
    }
    Ok(SolvedK { k, binding_id: id.to_string(), below_floor })
}

pub fn solve_k_for_epsilon<G>(
    g: &G,
    d_f: &[CertItem],
    t: usize,
    eps: f64,
    robust_quantile: f64,
    k_floor: f64,
) -> Result<SolvedK>
where
    G: SequenceModel + ?Sized,
{
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::input(format!("epsilon must lie in (0, 1], got {eps}")));
    }
    let scores = guide_scores(g, d_f)?;
    solve_k_for_log2_epsilon(&scores, t, eps.log2(), robust_quantile, k_floor)
}

/// Ratio of the non-adversarial baseline `L(y|x)` to the certified bound of
/// `M`, in decimal log. The baseline underestimates what an adversary could
/// get from `L`, so this understates the true constriction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstrictionRecord {
    pub log2_l: f64,
    pub log2_eps: f64,
    pub log10_cr: f64,
}

pub fn constriction_ratio(log_l: LogProb, ac: &AtomicCertificate) -> ConstrictionRecord {
    ConstrictionRecord {
        log2_l: log_l.bits(),
        log2_eps: ac.log2_eps,
        log10_cr: (log_l.bits() - ac.log2_eps) * std::f64::consts::LOG10_2,
    }
}

/// `max over the support of P of log2 P - log2 Q`, over aligned score slices.
/// Points where `P = 0` are skipped; `Q = 0` under positive `P` gives `+inf`.
pub fn renyi_inf_divergence(log2_p: &[f64], log2_q: &[f64]) -> Result<f64> {
    if log2_p.len() != log2_q.len() {
        return Err(Error::input(format!("score lengths differ: {} vs {}", log2_p.len(), log2_q.len())));
    }
    Ok(log2_p
        .iter()
        .zip(log2_q)
        .filter(|(p, _)| **p != f64::NEG_INFINITY)
        .map(|(p, q)| if *q == f64::NEG_INFINITY { f64::INFINITY } else { p - q })
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Divergence of `L(.|x)` from the marginal `G` over the enumerated support of
/// `L(.|x)` up to `max_len` tokens.
pub fn renyi_inf_between<L, G>(l: &L, g: &G, x: &[TokenId], max_len: usize) -> Result<f64>
where
    L: SequenceModel + ?Sized,
    G: SequenceModel + ?Sized,
{
    let support = l.enumerate_support(x, max_len)?;
    let log_p: Vec<f64> = support.entries.iter().map(|(_, p)| p.log2()).collect();
    let log_q = exec::try_map(&support.entries, |(y, _)| g.logprob_marginal(y).map(LogProb::bits))?;
    renyi_inf_divergence(&log_p, &log_q)
}

/// Linear value of `2^log2` for display. Below the smallest normal double the
/// value is annotated as underflowed and shown as zero.
pub fn display_probability(log2: f64) -> String {
    if log2 < MIN_NORMAL_LOG2 {
        format!("0 (underflow; 2^{log2:.3})")
    } else {
        format!("{:.6e}", log2.exp2())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub k_bits: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub log2_eps: f64,
    pub log10_eps: f64,
    pub witness_id: String,
    pub dataset_fingerprint: String,
    pub robust_quantile: f64,
    pub eps_display: String,
    pub underflow: bool,
}

impl CertificateReport {
    pub fn new(dc: &DomainCertificate) -> Self {
        CertificateReport {
            k_bits: dc.k,
            t: dc.t,
            log2_eps: dc.log2_eps,
            log10_eps: dc.log2_eps * std::f64::consts::LOG10_2,
            witness_id: dc.witness_id.clone(),
            dataset_fingerprint: dc.dataset_fingerprint.clone(),
            robust_quantile: dc.robust_quantile,
            eps_display: display_probability(dc.log2_eps),
            underflow: dc.log2_eps < MIN_NORMAL_LOG2,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UniformModel;

    fn score(id: &str, n_y: usize, log2_g: f64) -> GuideScore {
        GuideScore { id: id.into(), n_y, log2_g }
    }

    #[test]
    fn atomic_parts() {
        let g = UniformModel::new(4).unwrap();
        let y = [2, 3, 1];
        let ac = atomic_certificate(&g, &y, 0.0, 1).unwrap();
        assert_eq!(ac.log2_eps, -6.0);
        let ac2 = atomic_certificate(&g, &y, 0.0, 2).unwrap();
        assert_eq!(ac2.log2_eps - ac.log2_eps, 1.0);
        let ac3 = atomic_certificate(&g, &y, 1.5, 4).unwrap();
        assert_eq!(ac3.log2_eps, 1.5 * 3.0 + 2.0 - 6.0);
        assert!(atomic_certificate(&g, &y, 0.0, 0).is_err());
    }

    #[test]
    fn domain_max_witness_and_ties() {
        let scores = vec![score("b", 2, -4.0), score("a", 2, -4.0), score("c", 1, -10.0)];
        let dc = domain_certificate_from_scores(&scores, 1.0, 1, 1.0, String::new()).unwrap();
        assert_eq!(dc.log2_eps, -2.0);
        assert_eq!(dc.witness_id, "a");
        let dc = domain_certificate_from_scores(&scores, 9.0, 1, 1.0, String::new()).unwrap();
        assert_eq!(dc.witness_id, "a");
        assert_eq!(dc.log2_eps, 14.0);
        assert!(domain_certificate_from_scores(&[], 1.0, 1, 1.0, String::new()).is_err());
        assert!(domain_certificate_from_scores(&scores, 1.0, 1, 0.0, String::new()).is_err());
    }

    #[test]
    fn robust_quantile_is_order_statistic() {
        let scores: Vec<GuideScore> = (0..10).map(|i| score(&format!("{i:02}"), 1, -(i as f64))).collect();
        let dc = domain_certificate_from_scores(&scores, 0.0, 1, 0.5, String::new()).unwrap();
        // ascending: -9..0; 5th smallest is -5
        assert_eq!(dc.log2_eps, -5.0);
        assert_eq!(dc.witness_id, "05");
    }

    #[test]
    fn solve_single_item_closed_form() {
        let s = [score("x", 4, -7.0)];
        let r = solve_k_for_log2_epsilon(&s, 1, -20.0, 1.0, -100.0).unwrap();
        assert_eq!(r.k, (-20.0 + 7.0) / 4.0);
        assert!(!r.below_floor);
        let r = solve_k_for_log2_epsilon(&s, 1, -20.0, 1.0, 0.0).unwrap();
        assert!(r.below_floor);
        assert!(solve_k_for_log2_epsilon(&s, 1, 0.5, 1.0, 0.0).is_err());
    }

    #[test]
    fn fingerprint_ignores_order_and_sees_content() {
        let a = vec![CertItem::new("1", vec![2, 1]), CertItem::new("2", vec![3, 1])];
        let b = vec![a[1].clone(), a[0].clone()];
        assert_eq!(dataset_fingerprint(&a), dataset_fingerprint(&b));
        let c = vec![a[0].clone(), CertItem::new("2", vec![4, 1])];
        assert_ne!(dataset_fingerprint(&a), dataset_fingerprint(&c));
        assert_eq!(dataset_fingerprint(&a).len(), 64);
    }

    #[test]
    fn constriction_examples() {
        let ac = AtomicCertificate::from_parts(0.0, 1, 1, -30.0).unwrap();
        assert_eq!(constriction_ratio(LogProb(-30.0), &ac).log10_cr, 0.0);
        let r = constriction_ratio(LogProb(-10.0), &ac).log10_cr;
        assert!((r - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert!((r - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn renyi_examples() {
        let p = [-1.0, -2.0, -2.0];
        assert_eq!(renyi_inf_divergence(&p, &p).unwrap(), 0.0);
        assert_eq!(renyi_inf_divergence(&[0.0, f64::NEG_INFINITY], &[-2.0, -0.5]).unwrap(), 2.0);
        assert_eq!(renyi_inf_divergence(&[-1.0], &[f64::NEG_INFINITY]).unwrap(), f64::INFINITY);
        assert!(renyi_inf_divergence(&[0.0], &[]).is_err());
    }

    #[test]
    fn report_json_and_underflow() {
        let scores = vec![score("w", 100, -1500.0)];
        let dc = domain_certificate_from_scores(&scores, 0.0, 1, 1.0, "f".into()).unwrap();
        let rep = dc.report();
        assert!(rep.underflow);
        assert!(rep.eps_display.starts_with("0 (underflow"));
        let v: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        for key in ["k_bits", "T", "log2_eps", "log10_eps", "witness_id", "dataset_fingerprint", "robust_quantile"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(display_probability(-1.0), "5.000000e-1");
    }
}
