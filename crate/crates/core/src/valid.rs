//! The rejection-sampling meta-model.
//!
//! Up to `T` responses are drawn from `L(.|x)`. The first one whose
//! log-likelihood ratio against the guide satisfies
//! `log2 L(y|x) - log2 G(y) <= k N_y` is returned; otherwise the model
//! abstains. Abstention is an ordinary outcome value.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::model::{LogProb, Sequence, SequenceModel};

/// Slack, in units of machine epsilon times the operand magnitudes, under
/// which a ratio counts as tied with the threshold. It absorbs the rounding
/// of `log2` and of the per-token sums (constant per-token ratios of exactly
/// `k` otherwise land an ulp on either side).
pub const TIE_SLACK_ULPS: f64 = 32.0;

/// True iff `log_l - log_g <= k * n_y`, ties accepting.
///
/// An impossible response (`log_l = -inf`) is accepted vacuously; a finite
/// `log_l` against `log_g = -inf` is rejected.
pub fn acceptance_test(log_l: LogProb, log_g: LogProb, n_y: usize, k: f64) -> bool {
    debug_assert!(n_y >= 1, "responses have at least one token");
    let (l, g) = (log_l.bits(), log_g.bits());
    if l == f64::NEG_INFINITY {
        return true;
    }
    if g == f64::NEG_INFINITY || l.is_nan() || g.is_nan() {
        return false;
    }
    let ratio = l - g;
    let bound = k * n_y as f64;
    if !bound.is_finite() {
        return ratio <= bound;
    }
    let slack = TIE_SLACK_ULPS * f64::EPSILON * (l.abs() + g.abs() + bound.abs());
    ratio <= bound + slack
}

/// `(log2 L(y|x) - log2 G(y)) / N_y`, the per-token ratio compared against `k`.
pub fn normalized_ratio(log_l: LogProb, log_g: LogProb, n_y: usize) -> f64 {
    (log_l.bits() - log_g.bits()) / n_y as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidConfig {
    /// Rejection threshold in bits per token.
    pub k: f64,
    /// `T`, the maximum number of proposals.
    pub max_iterations: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl ValidConfig {
    pub fn new(k: f64, max_iterations: usize, max_len: usize, seed: u64) -> Result<Self> {
        let cfg = ValidConfig { k, max_iterations, max_len, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::input("T must be at least 1"));
        }
        if self.max_len == 0 {
            return Err(Error::input("max_len must be at least 1"));
        }
        if self.k.is_nan() {
            return Err(Error::input("k must be a number"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub y: Sequence,
    pub log_l: f64,
    pub log_g: f64,
    /// The draw hit `max_len` without EOS; always rejected.
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ValidOutcome {
    Accepted {
        y: Sequence,
        /// 1-based index of the accepted proposal.
        iteration: usize,
        log_l: f64,
        log_g: f64,
        rejected: Vec<Trial>,
    },
    Abstained {
        trials: usize,
        rejected: Vec<Trial>,
    },
}

impl ValidOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, ValidOutcome::Accepted { .. })
    }

    /// Proposals drawn (`tau`).
    pub fn iterations(&self) -> usize {
        match self {
            ValidOutcome::Accepted { iteration, .. } => *iteration,
            ValidOutcome::Abstained { trials, .. } => *trials,
        }
    }

    pub fn response(&self) -> Option<&Sequence> {
        match self {
            ValidOutcome::Accepted { y, .. } => Some(y),
            ValidOutcome::Abstained { .. } => None,
        }
    }

    /// Recomputes every logged score from the models and re-runs the
    /// acceptance test: accepted responses must pass, logged rejections fail.
    pub fn verify<L, G>(&self, l: &L, g: &G, x: &[u32], k: f64) -> Result<bool>
    where
        L: SequenceModel + ?Sized,
        G: SequenceModel + ?Sized,
    {
        let rejected = match self {
            ValidOutcome::Accepted { y, log_l, log_g, rejected, .. } => {
                let (rl, rg) = (l.logprob_conditional(y, x)?, g.logprob_marginal(y)?);
                let same = rl.bits().to_bits() == log_l.to_bits() && rg.bits().to_bits() == log_g.to_bits();
                if !same || !y.is_terminated(l.eos()) || !acceptance_test(rl, rg, y.n_tokens(), k) {
                    return Ok(false);
                }
                rejected
            }
            ValidOutcome::Abstained { rejected, .. } => rejected,
        };
        for t in rejected {
            if t.truncated {
                continue;
            }
            let (rl, rg) = (l.logprob_conditional(&t.y, x)?, g.logprob_marginal(&t.y)?);
            if acceptance_test(rl, rg, t.y.n_tokens(), k) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One run of the rejection loop for prompt `x`. Every proposal uses fresh
/// draws from `rng`.
pub fn run_valid<L, G>(l: &L, g: &G, cfg: &ValidConfig, x: &[u32], rng: &mut dyn RngCore) -> Result<ValidOutcome>
where
    L: SequenceModel + ?Sized,
    G: SequenceModel + ?Sized,
{
    cfg.validate()?;
    let mut rejected = Vec::new();
    for t in 1..=cfg.max_iterations {
        let sample = l.sample(x, cfg.max_len, rng)?;
        let y = sample.sequence;
        let log_l = l.logprob_conditional(&y, x)?;
        let log_g = g.logprob_marginal(&y)?;
        if !sample.truncated && acceptance_test(log_l, log_g, y.n_tokens(), cfg.k) {
            return Ok(ValidOutcome::Accepted { y, iteration: t, log_l: log_l.bits(), log_g: log_g.bits(), rejected });
        }
        rejected.push(Trial { y, log_l: log_l.bits(), log_g: log_g.bits(), truncated: sample.truncated });
    }
    Ok(ValidOutcome::Abstained { trials: cfg.max_iterations, rejected })
}

/// Runs the loop once per prompt; prompt `i` draws from random stream `i`
/// under `cfg.seed`.
pub fn run_valid_batch<L, G>(l: &L, g: &G, cfg: &ValidConfig, prompts: &[Sequence]) -> Result<Vec<ValidOutcome>>
where
    L: SequenceModel + ?Sized,
    G: SequenceModel + ?Sized,
{
    let indexed: Vec<(usize, &Sequence)> = prompts.iter().enumerate().collect();
    exec::try_map(&indexed, |&(i, x)| {
        let mut rng = exec::stream_rng(cfg.seed, i as u64);
        run_valid(l, g, cfg, x, &mut rng)
    })
}

/// Aggregate of many independent runs for one prompt.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidSimulation {
    pub runs: u64,
    pub abstained: u64,
    pub iterations_sum: u64,
    pub iterations_sq_sum: u64,
    pub accepted: HashMap<Sequence, u64>,
}

impl ValidSimulation {
    pub fn abstain_rate(&self) -> f64 {
        self.abstained as f64 / self.runs as f64
    }

    pub fn mean_iterations(&self) -> f64 {
        self.iterations_sum as f64 / self.runs as f64
    }

    /// Standard error of the mean iteration count.
    pub fn iterations_std_error(&self) -> f64 {
        let n = self.runs as f64;
        let mean = self.mean_iterations();
        let var = (self.iterations_sq_sum as f64 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
        (var / n).sqrt()
    }

    pub fn frequency(&self, y: &Sequence) -> f64 {
        self.accepted.get(y).copied().unwrap_or(0) as f64 / self.runs as f64
    }

    fn merge(&mut self, other: ValidSimulation) {
        self.runs += other.runs;
        self.abstained += other.abstained;
        self.iterations_sum += other.iterations_sum;
        self.iterations_sq_sum += other.iterations_sq_sum;
        for (y, c) in other.accepted {
            *self.accepted.entry(y).or_insert(0) += c;
        }
    }
}

const SIMULATION_CHUNK: u64 = 4096;

/// `runs` independent executions of the loop for a fixed prompt.
pub fn simulate_valid<L, G>(l: &L, g: &G, cfg: &ValidConfig, x: &[u32], runs: u64) -> Result<ValidSimulation>
where
    L: SequenceModel + ?Sized,
    G: SequenceModel + ?Sized,
{
    cfg.validate()?;
    let chunks = runs.div_ceil(SIMULATION_CHUNK) as usize;
    let parts = exec::map_range(chunks, |c| -> Result<ValidSimulation> {
        let mut rng = exec::stream_rng(cfg.seed, c as u64);
        let n = SIMULATION_CHUNK.min(runs - c as u64 * SIMULATION_CHUNK);
        let mut part = ValidSimulation::default();
        for _ in 0..n {
            let outcome = run_valid(l, g, cfg, x, &mut rng)?;
            let it = outcome.iterations() as u64;
            part.runs += 1;
            part.iterations_sum += it;
            part.iterations_sq_sum += it * it;
            match outcome {
                ValidOutcome::Accepted { y, .. } => *part.accepted.entry(y).or_insert(0) += 1,
                ValidOutcome::Abstained { .. } => part.abstained += 1,
            }
        }
        Ok(part)
    });
    let mut total = ValidSimulation::default();
    for p in parts {
        total.merge(p?);
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Ground-truth batch scoring
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "ID")]
    InDomain,
    #[serde(rename = "OOD")]
    OutOfDomain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub label: Label,
    pub x: Sequence,
    pub y: Sequence,
}

/// Log-likelihood evidence for one (prompt, ground-truth response) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub label: Label,
    pub n_y: usize,
    #[serde(rename = "logL_bits")]
    pub log_l: f64,
    #[serde(rename = "logG_bits")]
    pub log_g: f64,
    #[serde(rename = "norm_ratio_bits")]
    pub norm_ratio: f64,
}

impl EvalRecord {
    pub fn accepted_at(&self, k: f64) -> bool {
        acceptance_test(LogProb(self.log_l), LogProb(self.log_g), self.n_y, k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkippedItem {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchEvaluation {
    pub records: Vec<EvalRecord>,
    /// `accepted[i][j]`: record `i` passes the acceptance test at `k_grid[j]`.
    pub accepted: Vec<Vec<bool>>,
    pub skipped: Vec<SkippedItem>,
}

/// Scores ground-truth responses; nothing is sampled. Items with unknown
/// tokens are skipped and reported, as are unterminated responses unless
/// `include_truncated` is set.
pub fn batch_evaluate<L, G>(
    l: &L,
    g: &G,
    k_grid: &[f64],
    items: &[EvalItem],
    include_truncated: bool,
) -> Result<BatchEvaluation>
where
    L: SequenceModel + ?Sized,
    G: SequenceModel + ?Sized,
{
    if items.is_empty() {
        return Err(Error::input("evaluation dataset is empty"));
    }
    let scored = exec::map(items, |item| -> std::result::Result<EvalRecord, String> {
        if item.y.is_empty() {
            return Err("empty response".into());
        }
        if !include_truncated && !item.y.is_terminated(l.eos()) {
            return Err("response is not terminated".into());
        }
        let log_l = l.logprob_conditional(&item.y, &item.x).map_err(|e| e.to_string())?;
        let log_g = g.logprob_marginal(&item.y).map_err(|e| e.to_string())?;
        let n_y = item.y.n_tokens();
        Ok(EvalRecord {
            id: item.id.clone(),
            label: item.label,
            n_y,
            log_l: log_l.bits(),
            log_g: log_g.bits(),
            norm_ratio: normalized_ratio(log_l, log_g, n_y),
        })
    });
    let mut out = BatchEvaluation { records: Vec::new(), accepted: Vec::new(), skipped: Vec::new() };
    for (item, r) in items.iter().zip(scored) {
        match r {
            Ok(rec) => {
                out.accepted.push(k_grid.iter().map(|&k| rec.accepted_at(k)).collect());
                out.records.push(rec);
            }
            Err(reason) => {
                log::warn!("skipping item {}: {reason}", item.id);
                out.skipped.push(SkippedItem { id: item.id.clone(), reason });
            }
        }
    }
    Ok(out)
}

pub fn write_records_csv<W: Write>(writer: W, records: &[EvalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<EvalRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let rec: EvalRecord = rec?;
        if rec.n_y == 0 {
            return Err(Error::Format(format!("record {} has n_y = 0", rec.id)));
        }
        out.push(rec);
    }
    Ok(out)
}
