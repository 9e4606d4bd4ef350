use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::certificates::quantile_index;
use crate::error::{Error, Result};
use crate::exec;
use crate::valid::{EvalRecord, Label, ValidOutcome};

/// False-rejection targets for which the sweep reports a threshold.
pub const TARGET_FRRS: [f64; 7] = [0.0, 0.01, 0.05, 0.10, 0.20, 0.25, 0.50];

pub const DEFAULT_GRID_POINTS: usize = 256;

/// `points` evenly spaced values spanning the finite normalized ratios plus a
/// 10% margin on each side.
pub fn default_k_grid(records: &[EvalRecord], points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::input("a grid needs at least two points"));
    }
    let (lo, hi) = records
        .iter()
        .map(|r| r.norm_ratio)
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return Err(Error::input("no finite normalized ratios to span"));
    }
    let margin = if hi > lo { 0.1 * (hi - lo) } else { 0.1 * lo.abs().max(1.0) };
    let (lo, hi) = (lo - margin, hi + margin);
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|i| if i == points - 1 { hi } else { lo + step * i as f64 }).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: f64,
    pub frr: Option<f64>,
    pub trr: Option<f64>,
    pub j: Option<f64>,
    /// Deciles of `log10` constriction ratios over out-of-domain records.
    pub cr_p10: Option<f64>,
    pub cr_p50: Option<f64>,
    pub cr_p90: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetFrr {
    pub target_frr: f64,
    pub k: f64,
    pub frr: f64,
    pub trr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub t: usize,
    pub n_id: usize,
    pub n_ood: usize,
    pub points: Vec<SweepPoint>,
    pub targets: Vec<TargetFrr>,
    pub warnings: Vec<String>,
}

impl SweepResult {
    /// Grid point with the largest Youden J; the smallest such `k` on ties.
    pub fn best_j(&self) -> Option<&SweepPoint> {
        self.points
            .iter()
            .filter(|p| p.j.is_some())
            .fold(None, |best: Option<&SweepPoint>, p| match best {
                Some(b) if b.j >= p.j => Some(b),
                _ => Some(p),
            })
    }
}

fn rejected_fraction(records: &[&EvalRecord], k: f64) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    Some(records.iter().filter(|r| !r.accepted_at(k)).count() as f64 / records.len() as f64)
}

/// Ground-truth rejection rates over a grid of thresholds. FRR is the share
/// of in-domain records failing the acceptance test, TRR the share of
/// out-of-domain ones. Constriction deciles use the certificate at `t`
/// proposals. Input with one label yields the available half and a warning.
pub fn frr_trr_sweep(records: &[EvalRecord], k_grid: &[f64], t: usize) -> Result<SweepResult> {
    if records.is_empty() {
        return Err(Error::input("no records to sweep"));
    }
    if t == 0 {
        return Err(Error::input("T must be at least 1"));
    }
    if k_grid.iter().any(|k| k.is_nan()) {
        return Err(Error::input("k grid contains NaN"));
    }
    let id: Vec<&EvalRecord> = records.iter().filter(|r| r.label == Label::InDomain).collect();
    let ood: Vec<&EvalRecord> = records.iter().filter(|r| r.label == Label::OutOfDomain).collect();
    let mut warnings = Vec::new();
    if id.is_empty() {
        warnings.push("no in-domain records; FRR and J are unavailable".to_string());
    }
    if ood.is_empty() {
        warnings.push("no out-of-domain records; TRR, J and constriction are unavailable".to_string());
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let log2_t = (t as f64).log2();
    let points = exec::map(k_grid, |&k| {
        let frr = rejected_fraction(&id, k);
        let trr = rejected_fraction(&ood, k);
        let mut cr: Vec<f64> = ood
            .iter()
            .map(|r| (r.log_l - (k * r.n_y as f64 + log2_t + r.log_g)) * std::f64::consts::LOG10_2)
            .filter(|v| !v.is_nan())
            .collect();
        cr.sort_by(f64::total_cmp);
        let q = |p: f64| (!cr.is_empty()).then(|| cr[quantile_index(p, cr.len())]);
        SweepPoint {
            k,
            frr,
            trr,
            j: frr.zip(trr).map(|(f, t)| t - f),
            cr_p10: q(0.1),
            cr_p50: q(0.5),
            cr_p90: q(0.9),
        }
    });
    let mut targets = Vec::new();
    if !id.is_empty() {
        let mut ratios: Vec<f64> = id.iter().map(|r| r.norm_ratio).collect();
        ratios.sort_by(f64::total_cmp);
        for &target in &TARGET_FRRS {
            let k = ratios[quantile_index(1.0 - target, ratios.len())];
            targets.push(TargetFrr {
                target_frr: target,
                k,
                frr: rejected_fraction(&id, k).unwrap_or(0.0),
                trr: rejected_fraction(&ood, k),
            });
        }
    }
    Ok(SweepResult { t, n_id: id.len(), n_ood: ood.len(), points, targets, warnings })
}

/// Share of runs that abstained, the generation-mode counterpart of FRR.
pub fn generation_frr(outcomes: &[ValidOutcome]) -> Option<f64> {
    if outcomes.is_empty() {
        return None;
    }
    Some(outcomes.iter().filter(|o| !o.is_accepted()).count() as f64 / outcomes.len() as f64)
}

/// Columns `k,frr,trr,j,cr_p10,cr_p50,cr_p90`; unavailable values are empty.
pub fn write_sweep_csv<W: Write>(writer: W, sweep: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in &sweep.points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: usize, label: Label, ratio: f64) -> EvalRecord {
        EvalRecord { id: id.to_string(), label, n_y: 1, log_l: ratio - 10.0, log_g: -10.0, norm_ratio: ratio }
    }

    fn separated() -> Vec<EvalRecord> {
        let mut v: Vec<EvalRecord> = (0..10).map(|i| rec(i, Label::InDomain, i as f64 * 0.1)).collect();
        v.extend((10..20).map(|i| rec(i, Label::OutOfDomain, 2.0 + i as f64 * 0.1)));
        v
    }

    #[test]
    fn extreme_thresholds() {
        let s = frr_trr_sweep(&separated(), &[100.0, -100.0], 1).unwrap();
        assert_eq!((s.points[0].frr, s.points[0].trr, s.points[0].j), (Some(0.0), Some(0.0), Some(0.0)));
        assert_eq!((s.points[1].frr, s.points[1].trr, s.points[1].j), (Some(1.0), Some(1.0), Some(0.0)));
    }

    #[test]
    fn separated_ratios_reach_j_one_in_gap() {
        let s = frr_trr_sweep(&separated(), &[1.0, 1.5, 2.9], 1).unwrap();
        for p in &s.points {
            assert_eq!(p.j, Some(1.0));
        }
        let grid = default_k_grid(&separated(), 256).unwrap();
        let s = frr_trr_sweep(&separated(), &grid, 1).unwrap();
        assert_eq!(s.best_j().unwrap().j, Some(1.0));
    }

    #[test]
    fn grid_spans_with_margin() {
        let g = default_k_grid(&separated(), 256).unwrap();
        assert_eq!(g.len(), 256);
        let (lo, hi) = (0.0, 3.9);
        assert!((g[0] - (lo - 0.39)).abs() < 1e-12);
        assert_eq!(g[255], hi + 0.1 * (hi - lo));
    }

    #[test]
    fn target_frr_thresholds() {
        let s = frr_trr_sweep(&separated(), &[0.0], 1).unwrap();
        let t0 = &s.targets[0];
        assert_eq!((t0.target_frr, t0.frr), (0.0, 0.0));
        assert!((t0.k - 0.9).abs() < 1e-12);
        for t in &s.targets {
            assert!(t.frr <= t.target_frr + 1e-12);
        }
        let half = s.targets.iter().find(|t| t.target_frr == 0.5).unwrap();
        assert_eq!(half.frr, 0.5);
    }

    #[test]
    fn single_label_is_partial() {
        let only_id: Vec<EvalRecord> = separated().into_iter().filter(|r| r.label == Label::InDomain).collect();
        let s = frr_trr_sweep(&only_id, &[0.5], 1).unwrap();
        assert_eq!(s.points[0].trr, None);
        assert_eq!(s.points[0].j, None);
        assert!(s.points[0].frr.is_some());
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn constriction_deciles_follow_certificate() {
        let s = frr_trr_sweep(&separated(), &[0.0], 2).unwrap();
        // cr = (log_l - (log2 2 + log_g)) log10 2 = (ratio - 1) log10 2
        let mut cr: Vec<f64> = (10..20).map(|i| (2.0 + i as f64 * 0.1 - 1.0) * 2f64.log10()).collect();
        cr.sort_by(f64::total_cmp);
        assert!((s.points[0].cr_p50.unwrap() - cr[4]).abs() < 1e-12);
        assert!((s.points[0].cr_p90.unwrap() - cr[8]).abs() < 1e-12);
    }

    #[test]
    fn csv_header() {
        let s = frr_trr_sweep(&separated(), &[0.5], 1).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,frr,trr,j,cr_p10,cr_p50,cr_p90\n"));
    }
}
