//! Rater-effect estimation and correction.
//!
//! Every rater is compared with a reference built from the other raters of
//! the same samples. A bias profile stores the mean offset `b` and corrects
//! with `r − b`; a linear profile stores a least-squares map `r ↦ a·r + b`.

mod crossval;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

pub use crossval::{
    crossval_protocol, AuditEntry, AuditKind, CrossValConfig, CrossValEntry, CrossValReport,
    Histogram, RaterSummary, Reference, HISTOGRAM_BINS, HISTOGRAM_BIN_WIDTH, HISTOGRAM_LO,
};

use crate::dataset::{aggregate_mos, RatingTable, TaskId};
use crate::error::{Error, Result};
use crate::eval::{compensated_sum, CompensatedSum};

pub const DEFAULT_MIN_SAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMethod {
    Bias,
    Linear,
}

impl fmt::Display for CorrectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrectionMethod::Bias => "bias",
            CorrectionMethod::Linear => "linear",
        })
    }
}

impl FromStr for CorrectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bias" => Ok(Self::Bias),
            "linear" => Ok(Self::Linear),
            other => Err(Error::InvalidConfig(format!(
                "unknown correction method '{other}' (expected bias or linear)"
            ))),
        }
    }
}

/// Fitted correction for one rater on one task.
///
/// `Bias` applies `r − b` with `a = 1`; `Linear` applies `a·r + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterProfile {
    pub rater_id: String,
    pub task: TaskId,
    pub method: CorrectionMethod,
    pub a: f64,
    pub b: f64,
    pub samples: usize,
    /// Set when a linear fit fell back to bias-only because every rating
    /// was identical.
    pub degenerate: bool,
}

impl RaterProfile {
    pub fn identity(rater_id: impl Into<String>, task: TaskId, method: CorrectionMethod) -> Self {
        Self {
            rater_id: rater_id.into(),
            task,
            method,
            a: 1.0,
            b: 0.0,
            samples: 0,
            degenerate: false,
        }
    }

    pub fn apply(&self, rating: f64) -> f64 {
        match self.method {
            CorrectionMethod::Bias => rating - self.b,
            CorrectionMethod::Linear => self.a * rating + self.b,
        }
    }
}

/// Mean of the sample's ratings without rater `rater`.
pub fn loo_mos(table: &RatingTable, sample: &str, rater: &str, task: &TaskId) -> Result<f64> {
    let ratings = table.sample_ratings(task, sample);
    if !ratings.iter().any(|r| r.rater_id == rater) {
        return Err(Error::RatingNotFound {
            sample: sample.into(),
            rater: rater.into(),
            task: task.clone(),
        });
    }
    if ratings.len() < 2 {
        return Err(Error::TooFewRatings {
            sample: sample.into(),
            task: task.clone(),
            count: ratings.len(),
            needed: 2,
        });
    }
    let mut others: Vec<f64> = ratings
        .iter()
        .filter(|r| r.rater_id != rater)
        .map(|r| r.value)
        .collect();
    others.sort_by(f64::total_cmp);
    Ok(compensated_sum(others.iter().copied()) / others.len() as f64)
}

/// `(rating, leave-one-out MOS)` for every sample the rater scored, in
/// sample-id order.
pub fn leave_one_out_pairs(table: &RatingTable, rater: &str, task: &TaskId) -> Result<Vec<(f64, f64)>> {
    let mut rated = table.rater_ratings(task, rater);
    rated.sort_by(|x, y| x.sample_id.cmp(&y.sample_id));
    rated
        .iter()
        .map(|r| Ok((r.value, loo_mos(table, &r.sample_id, rater, task)?)))
        .collect()
}

/// Fits a profile of the requested kind to `(rating, reference)` pairs.
pub fn profile_from_pairs(
    rater: &str,
    task: &TaskId,
    method: CorrectionMethod,
    pairs: &[(f64, f64)],
    min_samples: usize,
) -> Result<RaterProfile> {
    if pairs.len() < min_samples.max(1) {
        return Err(Error::TooFewSamples {
            rater: rater.into(),
            task: task.clone(),
            count: pairs.len(),
            needed: min_samples.max(1),
        });
    }
    let n = pairs.len() as f64;
    let bias: f64 = pairs.iter().map(|&(r, m)| r - m).collect::<CompensatedSum>().total() / n;
    let bias_profile = |degenerate| RaterProfile {
        rater_id: rater.into(),
        task: task.clone(),
        method: CorrectionMethod::Bias,
        a: 1.0,
        b: bias,
        samples: pairs.len(),
        degenerate,
    };
    match method {
        CorrectionMethod::Bias => Ok(bias_profile(false)),
        CorrectionMethod::Linear => {
            let first = pairs[0].0;
            if pairs.iter().all(|&(r, _)| r == first) {
                return Ok(bias_profile(true));
            }
            let mx = pairs.iter().map(|p| p.0).collect::<CompensatedSum>().total() / n;
            let my = pairs.iter().map(|p| p.1).collect::<CompensatedSum>().total() / n;
            let sxx: f64 = pairs
                .iter()
                .map(|&(r, _)| (r - mx) * (r - mx))
                .collect::<CompensatedSum>()
                .total();
            let sxy: f64 = pairs
                .iter()
                .map(|&(r, m)| (r - mx) * (m - my))
                .collect::<CompensatedSum>()
                .total();
            let a = sxy / sxx;
            Ok(RaterProfile {
                rater_id: rater.into(),
                task: task.clone(),
                method,
                a,
                b: my - a * mx,
                samples: pairs.len(),
                degenerate: false,
            })
        }
    }
}

/// Mean offset of the rater against leave-one-out references.
pub fn estimate_bias(table: &RatingTable, rater: &str, task: &TaskId, min_samples: usize) -> Result<RaterProfile> {
    let pairs = leave_one_out_pairs(table, rater, task)?;
    profile_from_pairs(rater, task, CorrectionMethod::Bias, &pairs, min_samples)
}

/// Least-squares map from the rater's scores onto leave-one-out references.
pub fn fit_linear(table: &RatingTable, rater: &str, task: &TaskId, min_samples: usize) -> Result<RaterProfile> {
    let pairs = leave_one_out_pairs(table, rater, task)?;
    profile_from_pairs(rater, task, CorrectionMethod::Linear, &pairs, min_samples)
}

/// Sum of squared residuals of `a·r + b` against the references.
pub fn linear_objective(pairs: &[(f64, f64)], a: f64, b: f64) -> f64 {
    pairs
        .iter()
        .map(|&(r, m)| {
            let e = a * r + b - m;
            e * e
        })
        .collect::<CompensatedSum>()
        .total()
}

/// Profiles for every rater of `task`. Raters that cannot be fitted are
/// returned with the reason instead.
pub fn estimate_profiles(
    table: &RatingTable,
    task: &TaskId,
    method: CorrectionMethod,
    min_samples: usize,
) -> (Vec<RaterProfile>, Vec<(String, Error)>) {
    let raters = table.raters(task);
    let results: Vec<(String, Result<RaterProfile>)> = raters
        .par_iter()
        .map(|&j| {
            let res = match method {
                CorrectionMethod::Bias => estimate_bias(table, j, task, min_samples),
                CorrectionMethod::Linear => fit_linear(table, j, task, min_samples),
            };
            (j.to_string(), res)
        })
        .collect();
    let mut profiles = Vec::new();
    let mut skipped = Vec::new();
    for (j, res) in results {
        match res {
            Ok(p) => profiles.push(p),
            Err(e) => skipped.push((j, e)),
        }
    }
    (profiles, skipped)
}

/// Applies each rating's matching profile; ratings without one are kept.
pub fn correct_ratings(table: &RatingTable, profiles: &[RaterProfile]) -> RatingTable {
    let index: HashMap<(&TaskId, &str), &RaterProfile> = profiles
        .iter()
        .map(|p| ((&p.task, p.rater_id.as_str()), p))
        .collect();
    table.map_values(|r| {
        index
            .get(&(&r.task, r.rater_id.as_str()))
            .map_or(r.value, |p| p.apply(r.value))
    })
}

/// MOS per sample after correcting every covered rater.
pub fn unbiased_mos(
    table: &RatingTable,
    profiles: &[RaterProfile],
    task: &TaskId,
) -> Result<BTreeMap<String, f64>> {
    aggregate_mos(&correct_ratings(table, profiles), task)
}
