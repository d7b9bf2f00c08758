//! Metric primitives (Pearson correlation, RMSE) and report rendering.
//!
//! Reductions use two-pass mean-centred formulas over Neumaier-compensated
//! sums. Undefined correlations are carried as `None` and never coerced to 0.

mod render;

pub use render::{
    crossval_csv, format_pair, format_pcc, format_rmse, histogram_csv, render_csv, render_table,
    ReportRow,
};

use crate::error::{Error, Result};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        for v in iter {
            s.add(v);
        }
        s
    }
}

pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().collect::<CompensatedSum>().total()
}

pub fn mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Sample Pearson correlation. `Ok(None)` when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::SeriesTooShort {
            found: x.len(),
            needed: 2,
        });
    }
    if is_constant(x) || is_constant(y) {
        return Ok(None);
    }
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = CompensatedSum::new();
    let mut sxx = CompensatedSum::new();
    let mut syy = CompensatedSum::new();
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy.add(dx * dy);
        sxx.add(dx * dx);
        syy.add(dy * dy);
    }
    let denom = (sxx.total() * syy.total()).sqrt();
    if denom == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy.total() / denom).clamp(-1.0, 1.0)))
}

/// Root-mean-squared difference.
pub fn rmse(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(Error::SeriesTooShort {
            found: 0,
            needed: 1,
        });
    }
    let sse = compensated_sum(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)));
    Ok((sse / x.len() as f64).sqrt())
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

/// PCC / RMSE over `n` prediction–label pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricPair {
    pub pcc: Option<f64>,
    pub rmse: Option<f64>,
    pub n: usize,
}

impl MetricPair {
    pub const UNDEFINED: MetricPair = MetricPair {
        pcc: None,
        rmse: None,
        n: 0,
    };

    /// Metrics for a pair of aligned series; both undefined when empty.
    pub fn from_series(pred: &[f64], truth: &[f64]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::LengthMismatch(pred.len(), truth.len()));
        }
        let n = pred.len();
        let rmse = if n == 0 { None } else { Some(rmse(pred, truth)?) };
        let pcc = if n < 2 { None } else { pearson(pred, truth)? };
        Ok(Self { pcc, rmse, n })
    }
}
