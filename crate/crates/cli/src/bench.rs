//! Benchmark-at-epsilon scoring and the valid-sequence accuracy comparison.

use domcert::certificates::{solve_k_for_log2_epsilon, GuideScore};
use domcert::chartask::{self, check_valid_sequence, CharTaskItem};
use domcert::exec;
use domcert::valid::acceptance_test;
use domcert::{Result, Sequence, SequenceModel};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsScore {
    pub eps: f64,
    pub log2_eps: f64,
    pub k: f64,
    pub raw_accuracy: f64,
    /// Share of items both accepted and answered correctly.
    pub score: f64,
    pub abstention_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchAtEpsResult {
    #[serde(rename = "T")]
    pub t: usize,
    pub n_items: usize,
    pub raw_accuracy: f64,
    pub rows: Vec<EpsScore>,
}

/// Per-item evidence: whether `L` answers correctly and the normalized
/// inputs of the acceptance test on the ground-truth answer.
#[derive(Clone, Debug, PartialEq)]
struct ItemEvidence {
    correct: bool,
    log_l: domcert::LogProb,
    log_g: domcert::LogProb,
    n_y: usize,
}

/// Scores each item on two independent streams. Correctness: the greedy
/// completion of the question by `L` is a valid sequence. Acceptance: the
/// ground-truth answer passes the acceptance test at `k(eps)`, the largest
/// threshold whose domain certificate over `d_f` stays within `eps`. An
/// item counts towards the score only if it is accepted and correct.
#[allow(clippy::too_many_arguments)]
pub fn bench_at_epsilon<L, G>(
    l: &L,
    g: &G,
    d_f: &[GuideScore],
    t: usize,
    eps_list: &[f64],
    items: &[CharTaskItem],
    max_len: usize,
    robust_quantile: f64,
    k_floor: f64,
) -> Result<BenchAtEpsResult>
where
    L: SequenceModel + ?Sized,
    G: SequenceModel + ?Sized,
{
    if items.is_empty() {
        return Err(domcert::Error::input("no benchmark items"));
    }
    let vocab = chartask::vocabulary();
    let evidence = exec::try_map(items, |it| -> Result<ItemEvidence> {
        let (x, y) = it.question_answer(&vocab)?;
        let answer = l.greedy(&x, max_len)?;
        let mut full = x.0.clone();
        full.extend_from_slice(&answer.sequence);
        Ok(ItemEvidence {
            correct: !answer.truncated && check_valid_sequence(&full, &vocab),
            log_l: l.logprob_conditional(&y, &x)?,
            log_g: g.logprob_marginal(&y)?,
            n_y: y.n_tokens(),
        })
    })?;
    let n = items.len() as f64;
    let raw_accuracy = evidence.iter().filter(|e| e.correct).count() as f64 / n;
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let log2_eps = eps.log2();
        let k = solve_k_for_log2_epsilon(d_f, t, log2_eps, robust_quantile, k_floor)?.k;
        let accepted: Vec<bool> = evidence.iter().map(|e| acceptance_test(e.log_l, e.log_g, e.n_y, k)).collect();
        let both = evidence.iter().zip(&accepted).filter(|(e, a)| e.correct && **a).count();
        let abstained = accepted.iter().filter(|a| !**a).count();
        rows.push(EpsScore {
            eps,
            log2_eps,
            k,
            raw_accuracy,
            score: both as f64 / n,
            abstention_rate: abstained as f64 / n,
        });
    }
    Ok(BenchAtEpsResult { t, n_items: items.len(), raw_accuracy, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub prompt_len: usize,
    pub prompts: usize,
    pub l_valid_rate: f64,
    pub g_full_valid_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub rows: Vec<AccuracyRow>,
}

/// Share of sampled completions that form valid sequences. Prompts are the
/// leading `prompt_len` tokens of each item; items not longer than the
/// prompt are skipped. Prompt `i` samples from random stream `i`.
pub fn valid_sequence_rate<M>(
    model: &M,
    items: &[CharTaskItem],
    prompt_len: usize,
    max_len: usize,
    seed: u64,
) -> Result<(usize, f64)>
where
    M: SequenceModel + ?Sized,
{
    let vocab = chartask::vocabulary();
    let prompts: Vec<(u64, Sequence)> = items
        .iter()
        .enumerate()
        .filter_map(|(i, it)| it.split_at(&vocab, prompt_len).ok().map(|(x, _)| (i as u64, x)))
        .collect();
    if prompts.is_empty() {
        return Ok((0, 0.0));
    }
    let valid = exec::try_map(&prompts, |(i, x)| -> Result<bool> {
        let mut rng = exec::stream_rng(seed, *i);
        let s = model.sample(x, max_len, &mut rng)?;
        let mut full = x.0.clone();
        full.extend_from_slice(&s.sequence);
        Ok(!s.truncated && check_valid_sequence(&full, &vocab))
    })?;
    let n = valid.len();
    Ok((n, valid.iter().filter(|v| **v).count() as f64 / n as f64))
}

/// Valid-sequence rates of `L` and of the full-sequence guide on the same
/// prompts and random streams.
pub fn compare_g_vs_l_accuracy<L, G>(
    l: &L,
    g_full: &G,
    prompt_lengths: &[usize],
    items: &[CharTaskItem],
    max_len: usize,
    seed: u64,
) -> Result<AccuracyTable>
where
    L: SequenceModel + ?Sized,
    G: SequenceModel + ?Sized,
{
    let mut rows = Vec::new();
    for &p in prompt_lengths {
        let stream_seed = crate::config::derive_seed(seed, &format!("prompt_len.{p}"));
        let (n, l_rate) = valid_sequence_rate(l, items, p, max_len, stream_seed)?;
        let (_, g_rate) = valid_sequence_rate(g_full, items, p, max_len, stream_seed)?;
        rows.push(AccuracyRow { prompt_len: p, prompts: n, l_valid_rate: l_rate, g_full_valid_rate: g_rate });
    }
    Ok(AccuracyTable { rows })
}
