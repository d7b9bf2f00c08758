//! Repeated random-reference evaluation of rater corrections.
//!
//! In each fold, every (rater, sample) pair draws `reference_raters` other
//! raters of the sample for a noisy reference; the remaining raters form a
//! disjoint hold-out reference. A profile is fitted against the noisy
//! references and scored against both.

use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{profile_from_pairs, CorrectionMethod, DEFAULT_MIN_SAMPLES};
use crate::dataset::{RatingTable, TaskId};
use crate::error::{Error, Result};
use crate::eval::{compensated_sum, rmse};
use crate::rng::stream;

pub const HISTOGRAM_BINS: usize = 100;
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.01;
pub const HISTOGRAM_LO: f64 = -0.5;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossValConfig {
    pub folds: usize,
    pub seed: u64,
    pub reference_raters: usize,
    pub min_holdout: usize,
    pub min_samples: usize,
    pub methods: Vec<CorrectionMethod>,
}

impl Default for CrossValConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            reference_raters: 4,
            min_holdout: 5,
            min_samples: DEFAULT_MIN_SAMPLES,
            methods: vec![CorrectionMethod::Bias, CorrectionMethod::Linear],
        }
    }
}

impl CrossValConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.folds == 0 {
            return bad("crossval folds must be at least 1");
        }
        if self.reference_raters == 0 || self.min_holdout == 0 {
            return bad("crossval reference_raters and min_holdout must be at least 1");
        }
        if self.methods.is_empty() {
            return bad("crossval needs at least one correction method");
        }
        Ok(())
    }

    /// Ratings a sample needs for a rater to use it.
    pub fn ratings_needed(&self) -> usize {
        1 + self.reference_raters + self.min_holdout
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// Mean of the randomly drawn reference raters.
    Loo,
    /// Mean of the disjoint remaining raters.
    Holdout,
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reference::Loo => "loo",
            Reference::Holdout => "holdout",
        })
    }
}

/// One rater, one fold, one method.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValEntry {
    pub fold: usize,
    pub rater_id: String,
    pub method: CorrectionMethod,
    pub samples: usize,
    pub degenerate: bool,
    pub rmse_loo_before: f64,
    pub rmse_loo_after: f64,
    pub rmse_holdout_before: f64,
    pub rmse_holdout_after: f64,
}

impl CrossValEntry {
    /// Positive when correction moved the rater closer to the reference.
    pub fn delta_loo(&self) -> f64 {
        self.rmse_loo_before - self.rmse_loo_after
    }

    pub fn delta_holdout(&self) -> f64 {
        self.rmse_holdout_before - self.rmse_holdout_after
    }

    pub fn delta(&self, reference: Reference) -> f64 {
        match reference {
            Reference::Loo => self.delta_loo(),
            Reference::Holdout => self.delta_holdout(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditKind {
    Sample,
    Rater,
}

impl fmt::Display for AuditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuditKind::Sample => "sample",
            AuditKind::Rater => "rater",
        })
    }
}

/// A sample or rater left out of the protocol. `count` is the sample's
/// rating count or the rater's usable sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub kind: AuditKind,
    pub id: String,
    pub count: usize,
    pub needed: usize,
}

/// Binned ΔRMSE per rater; `fold == None` is the across-fold mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub method: CorrectionMethod,
    pub reference: Reference,
    pub fold: Option<usize>,
    pub counts: Vec<f64>,
}

/// Per-rater ΔRMSE averaged over folds.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterSummary {
    pub rater_id: String,
    pub method: CorrectionMethod,
    pub mean_delta_loo: f64,
    pub mean_delta_holdout: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValReport {
    pub task: TaskId,
    pub folds: usize,
    pub seed: u64,
    pub raters: Vec<String>,
    pub entries: Vec<CrossValEntry>,
    pub skipped: Vec<AuditEntry>,
    pub histograms: Vec<Histogram>,
}

impl CrossValReport {
    pub fn summaries(&self, method: CorrectionMethod) -> Vec<RaterSummary> {
        self.raters
            .iter()
            .map(|j| {
                let rows: Vec<&CrossValEntry> = self
                    .entries
                    .iter()
                    .filter(|e| e.method == method && &e.rater_id == j)
                    .collect();
                let n = rows.len() as f64;
                RaterSummary {
                    rater_id: j.clone(),
                    method,
                    mean_delta_loo: compensated_sum(rows.iter().map(|e| e.delta_loo())) / n,
                    mean_delta_holdout: compensated_sum(rows.iter().map(|e| e.delta_holdout())) / n,
                }
            })
            .collect()
    }

    /// Plain-text overview: per method and reference, the mean ΔRMSE and
    /// the share of raters that improved.
    pub fn summary_text(&self) -> String {
        let mut lines = vec![
            format!("task: {}", self.task),
            format!("folds: {}", self.folds),
            format!("seed: {}", self.seed),
            format!("raters: {}", self.raters.len()),
            format!(
                "skipped: {} sample(s), {} rater(s)",
                self.skipped.iter().filter(|a| a.kind == AuditKind::Sample).count(),
                self.skipped.iter().filter(|a| a.kind == AuditKind::Rater).count()
            ),
        ];
        let mut methods: Vec<CorrectionMethod> = self.entries.iter().map(|e| e.method).collect();
        methods.sort();
        methods.dedup();
        for m in methods {
            let s = self.summaries(m);
            if s.is_empty() {
                continue;
            }
            let n = s.len() as f64;
            for (name, get) in [
                ("loo", (|r: &RaterSummary| r.mean_delta_loo) as fn(&RaterSummary) -> f64),
                ("holdout", |r: &RaterSummary| r.mean_delta_holdout),
            ] {
                let mean = compensated_sum(s.iter().map(get)) / n;
                let improved = s.iter().filter(|r| get(r) > 0.0).count();
                lines.push(format!(
                    "{m} vs {name}: mean delta_rmse {mean:.4}, improved {improved}/{} ({:.1}%)",
                    s.len(),
                    100.0 * improved as f64 / n
                ));
            }
        }
        lines.join("\n") + "\n"
    }
}

fn bin_of(delta: f64) -> usize {
    let i = ((delta - HISTOGRAM_LO) / HISTOGRAM_BIN_WIDTH).floor();
    if i.is_nan() || i < 0.0 {
        0
    } else {
        (i as usize).min(HISTOGRAM_BINS - 1)
    }
}

struct Observation {
    rating: f64,
    loo: f64,
    holdout: f64,
}

fn mean_of(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Runs the protocol for one task. Samples with too few ratings and raters
/// with too few usable samples are listed in `skipped`.
pub fn crossval_protocol(table: &RatingTable, task: &TaskId, config: &CrossValConfig) -> Result<CrossValReport> {
    config.validate()?;
    let samples = table.samples(task);
    if samples.is_empty() {
        return Err(Error::NoRatings {
            sample: "*".into(),
            task: task.clone(),
        });
    }
    let needed = config.ratings_needed();
    let mut skipped = Vec::new();
    let mut sample_pos = std::collections::HashMap::new();
    for (i, &s) in samples.iter().enumerate() {
        let count = table.rater_count(task, s);
        if count < needed {
            skipped.push(AuditEntry {
                kind: AuditKind::Sample,
                id: s.to_string(),
                count,
                needed,
            });
        } else {
            sample_pos.insert(s, i);
        }
    }

    let all_raters = table.raters(task);
    let mut raters = Vec::new();
    for &j in &all_raters {
        let usable = table
            .rater_ratings(task, j)
            .iter()
            .filter(|r| sample_pos.contains_key(r.sample_id.as_str()))
            .count();
        if usable < config.min_samples.max(1) {
            skipped.push(AuditEntry {
                kind: AuditKind::Rater,
                id: j.to_string(),
                count: usable,
                needed: config.min_samples.max(1),
            });
        } else {
            raters.push(j);
        }
    }

    let rater_pos: std::collections::HashMap<&str, usize> =
        all_raters.iter().enumerate().map(|(i, &j)| (j, i)).collect();
    let mut entries = Vec::new();
    for fold in 0..config.folds {
        let per_rater: Vec<Vec<CrossValEntry>> = raters
            .par_iter()
            .map(|&j| {
                let mut rated = table.rater_ratings(task, j);
                rated.sort_by(|x, y| x.sample_id.cmp(&y.sample_id));
                let obs: Vec<Observation> = rated
                    .iter()
                    .filter_map(|r| {
                        let &s_idx = sample_pos.get(r.sample_id.as_str())?;
                        let mut others: Vec<(&str, f64)> = table
                            .sample_ratings(task, &r.sample_id)
                            .iter()
                            .filter(|o| o.rater_id != j)
                            .map(|o| (o.rater_id.as_str(), o.value))
                            .collect();
                        others.sort_by(|x, y| x.0.cmp(y.0));
                        let mut rng = stream(
                            config.seed,
                            &[fold as u64, s_idx as u64, rater_pos[j] as u64],
                        );
                        let (picked, rest) = others.partial_shuffle(&mut rng, config.reference_raters);
                        let mut loo: Vec<f64> = picked.iter().map(|o| o.1).collect();
                        let mut hold: Vec<f64> = rest.iter().map(|o| o.1).collect();
                        Some(Observation {
                            rating: r.value,
                            loo: mean_of(&mut loo),
                            holdout: mean_of(&mut hold),
                        })
                    })
                    .collect();
                score_rater(fold, j, task, &obs, config)
            })
            .collect::<Result<Vec<_>>>()?;
        entries.extend(per_rater.into_iter().flatten());
    }

    let mut histograms = Vec::new();
    for &method in &config.methods {
        for reference in [Reference::Loo, Reference::Holdout] {
            let mut mean = vec![0.0; HISTOGRAM_BINS];
            for fold in 0..config.folds {
                let mut counts = vec![0.0; HISTOGRAM_BINS];
                for e in entries.iter().filter(|e| e.fold == fold && e.method == method) {
                    counts[bin_of(e.delta(reference))] += 1.0;
                }
                for (m, c) in mean.iter_mut().zip(&counts) {
                    *m += c / config.folds as f64;
                }
                histograms.push(Histogram {
                    method,
                    reference,
                    fold: Some(fold),
                    counts,
                });
            }
            histograms.push(Histogram {
                method,
                reference,
                fold: None,
                counts: mean,
            });
        }
    }

    Ok(CrossValReport {
        task: task.clone(),
        folds: config.folds,
        seed: config.seed,
        raters: raters.iter().map(|j| j.to_string()).collect(),
        entries,
        skipped,
        histograms,
    })
}

fn score_rater(
    fold: usize,
    rater: &str,
    task: &TaskId,
    obs: &[Observation],
    config: &CrossValConfig,
) -> Result<Vec<CrossValEntry>> {
    let pairs: Vec<(f64, f64)> = obs.iter().map(|o| (o.rating, o.loo)).collect();
    let raw: Vec<f64> = obs.iter().map(|o| o.rating).collect();
    let loo: Vec<f64> = obs.iter().map(|o| o.loo).collect();
    let hold: Vec<f64> = obs.iter().map(|o| o.holdout).collect();
    let loo_before = rmse(&raw, &loo)?;
    let hold_before = rmse(&raw, &hold)?;
    config
        .methods
        .iter()
        .map(|&method| {
            let profile = profile_from_pairs(rater, task, method, &pairs, config.min_samples)?;
            let corrected: Vec<f64> = raw.iter().map(|&r| profile.apply(r)).collect();
            Ok(CrossValEntry {
                fold,
                rater_id: rater.to_string(),
                method,
                samples: obs.len(),
                degenerate: profile.degenerate,
                rmse_loo_before: loo_before,
                rmse_loo_after: rmse(&corrected, &loo)?,
                rmse_holdout_before: hold_before,
                rmse_holdout_after: rmse(&corrected, &hold)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RatingRecord;

    /// `samples` samples, each rated by `per_sample` of `pool` raters, with
    /// rater `k` adding offset `offsets[k]` to a sample-dependent base.
    fn grid(samples: usize, per_sample: usize, pool: usize, offset: impl Fn(usize) -> f64) -> RatingTable {
        let mut recs = Vec::new();
        for s in 0..samples {
            let base = 1.5 + (s % 5) as f64 * 0.5;
            for k in 0..per_sample {
                let j = (s + k) % pool;
                recs.push(RatingRecord {
                    sample_id: format!("s{s:03}"),
                    rater_id: format!("r{j:02}"),
                    task: TaskId::Ovr,
                    value: base + offset(j) + if k % 2 == 0 { 0.25 } else { -0.25 },
                });
            }
        }
        RatingTable::from_records(recs).unwrap()
    }

    #[test]
    fn deterministic_and_fold_count() {
        let t = grid(60, 12, 15, |j| (j as f64 - 7.0) * 0.1);
        let cfg = CrossValConfig {
            folds: 3,
            seed: 9,
            ..CrossValConfig::default()
        };
        let a = crossval_protocol(&t, &TaskId::Ovr, &cfg).unwrap();
        let b = crossval_protocol(&t, &TaskId::Ovr, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.raters.len(), 15);
        assert_eq!(a.entries.len(), 3 * 15 * 2);
        assert_eq!(a.histograms.len(), 2 * 2 * 4);
        let c = crossval_protocol(&t, &TaskId::Ovr, &CrossValConfig { seed: 10, ..cfg.clone() }).unwrap();
        assert_ne!(a.entries, c.entries);

        let one = crossval_protocol(&t, &TaskId::Ovr, &CrossValConfig { folds: 1, ..cfg }).unwrap();
        assert!(one.entries.iter().all(|e| e.fold == 0));
        assert_eq!(one.entries.len(), 15 * 2);
    }

    #[test]
    fn histogram_counts_every_rater() {
        let t = grid(60, 12, 15, |j| if j < 5 { 0.6 } else { 0.0 });
        let r = crossval_protocol(&t, &TaskId::Ovr, &CrossValConfig::default()).unwrap();
        for h in &r.histograms {
            let total: f64 = h.counts.iter().sum();
            assert!((total - 15.0).abs() < 1e-9, "{total}");
        }
    }

    #[test]
    fn small_pools_are_audited() {
        let t = grid(30, 8, 10, |_| 0.0);
        let r = crossval_protocol(&t, &TaskId::Ovr, &CrossValConfig::default()).unwrap();
        assert!(r.entries.is_empty() && r.raters.is_empty());
        assert_eq!(r.skipped.iter().filter(|a| a.kind == AuditKind::Sample).count(), 30);
        assert_eq!(r.skipped.iter().filter(|a| a.kind == AuditKind::Rater).count(), 10);
        assert!(r.skipped.iter().all(|a| a.kind == AuditKind::Rater || (a.count == 8 && a.needed == 10)));
    }

    #[test]
    fn holdout_is_disjoint_and_sized() {
        // With exactly ten ratings per sample there are five hold-out raters.
        let t = grid(40, 10, 10, |j| j as f64 * 0.01);
        let cfg = CrossValConfig {
            folds: 1,
            methods: vec![CorrectionMethod::Bias],
            ..CrossValConfig::default()
        };
        let r = crossval_protocol(&t, &TaskId::Ovr, &cfg).unwrap();
        assert_eq!(r.raters.len(), 10);
        assert!(r.entries.iter().all(|e| e.samples == 40));
    }

    #[test]
    fn strong_bias_improves() {
        let t = grid(80, 12, 16, |j| if j % 4 == 0 { 0.8 } else { 0.0 });
        let r = crossval_protocol(&t, &TaskId::Ovr, &CrossValConfig::default()).unwrap();
        for s in r.summaries(CorrectionMethod::Bias) {
            let idx: usize = s.rater_id[1..].parse().unwrap();
            if idx.is_multiple_of(4) {
                assert!(s.mean_delta_holdout > 0.1, "{s:?}");
            }
        }
        assert!(r.summary_text().contains("bias vs holdout"));
    }

    #[test]
    fn bins() {
        assert_eq!(bin_of(-10.0), 0);
        assert_eq!(bin_of(10.0), HISTOGRAM_BINS - 1);
        assert_eq!(bin_of(0.0), 50);
        assert_eq!(bin_of(-0.005), 49);
    }

    #[test]
    fn rejects_bad_config() {
        let t = grid(30, 12, 12, |_| 0.0);
        let cfg = CrossValConfig {
            folds: 0,
            ..CrossValConfig::default()
        };
        assert!(crossval_protocol(&t, &TaskId::Ovr, &cfg).is_err());
        assert!(crossval_protocol(&t, &TaskId::Mos, &CrossValConfig::default()).is_err());
    }
}
