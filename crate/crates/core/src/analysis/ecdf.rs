use serde::{Deserialize, Serialize};

use crate::certificates::quantile_index;
use crate::error::{Error, Result};

/// Empirical CDF with right-continuous steps: `F(x) = #{v <= x} / n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    /// Errors on an empty slice or NaN.
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("eCDF of an empty sample"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::input("eCDF sample contains NaN"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Ecdf { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|v| *v <= x) as f64 / self.sorted.len() as f64
    }

    /// Smallest sample value `v` with `F(v) >= q`.
    pub fn quantile(&self, q: f64) -> f64 {
        self.sorted[quantile_index(q, self.sorted.len())]
    }

    /// One `(x, F(x))` point per distinct value.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, v) in self.sorted.iter().enumerate() {
            let p = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == *v => last.1 = p,
                _ => out.push((*v, p)),
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::input("histogram needs at least one bin"));
        }
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        if !lo.is_finite() {
            return Err(Error::input("histogram of an empty sample"));
        }
        let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
        let mut counts = vec![0u64; bins];
        for v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Histogram { edges, counts })
    }
}

/// Plot-ready summary of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesBundle {
    pub n: usize,
    /// Infinite values are left out of the series and counted here.
    pub non_finite: usize,
    pub ecdf: Vec<(f64, f64)>,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    pub histogram: Histogram,
}

/// eCDF steps, deciles and a histogram with `bins` equal-width bins. Values
/// are taken in whatever units they arrive (log10 for certificates and
/// constriction ratios).
pub fn ecdf_and_histograms(values: &[f64], bins: usize) -> Result<SeriesBundle> {
    if values.is_empty() {
        return Err(Error::input("no values to summarize"));
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::input("values contain NaN"));
    }
    let e = Ecdf::new(&finite)?;
    Ok(SeriesBundle {
        n: finite.len(),
        non_finite: values.len() - finite.len(),
        ecdf: e.steps(),
        p10: e.quantile(0.1),
        p50: e.quantile(0.5),
        p90: e.quantile(0.9),
        histogram: Histogram::new(&finite, bins)?,
    })
}
