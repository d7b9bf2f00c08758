//! Ratings, features, and partially labelled multi-task datasets.
//!
//! A [`Dataset`] stores labels next to a presence mask. The mask is
//! authoritative: masked-out label cells hold a NaN sentinel (when produced
//! by this crate) and every read goes through [`Dataset::label`], which
//! never looks at a masked cell.

mod io;
mod ratings;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

pub use io::{load_dataset, save_dataset};
pub use ratings::{
    aggregate_mos, aggregate_mos_for, load_ratings, save_ratings, write_ratings, RatingRecord,
    RatingTable,
};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Label sentinel stored in masked-out cells.
pub const MISSING: f64 = f64::NAN;

/// Identifier of a regression target.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskId {
    Mos,
    Ovr,
    Sig,
    Bak,
    T60,
    C50,
    Other(String),
}

impl TaskId {
    pub fn as_str(&self) -> &str {
        match self {
            TaskId::Mos => "MOS",
            TaskId::Ovr => "OVR",
            TaskId::Sig => "SIG",
            TaskId::Bak => "BAK",
            TaskId::T60 => "T60",
            TaskId::C50 => "C50",
            TaskId::Other(name) => name,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s.contains([',', '\n', '\r']) {
            return Err(Error::InvalidConfig(format!("invalid task name '{s}'")));
        }
        Ok(match s.to_ascii_uppercase().as_str() {
            "MOS" => TaskId::Mos,
            "OVR" => TaskId::Ovr,
            "SIG" => TaskId::Sig,
            "BAK" => TaskId::Bak,
            "T60" => TaskId::T60,
            "C50" => TaskId::C50,
            _ => TaskId::Other(s.to_string()),
        })
    }
}

impl serde::Serialize for TaskId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> serde::Deserialize<'de> for TaskId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Feature matrix plus partial label matrix over an ordered task list.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sample_ids: Vec<String>,
    features: Matrix,
    labels: Matrix,
    mask: Vec<bool>,
    tasks: Vec<TaskId>,
}

impl Dataset {
    /// Validates shapes and identifiers. Masked label cells are kept as given
    /// and never read afterwards.
    pub fn new(
        sample_ids: Vec<String>,
        features: Matrix,
        labels: Matrix,
        mask: Vec<bool>,
        tasks: Vec<TaskId>,
    ) -> Result<Self> {
        let n = sample_ids.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if features.rows() != n {
            return Err(Error::DimensionMismatch {
                what: "feature rows",
                expected: n,
                found: features.rows(),
            });
        }
        if features.cols() == 0 {
            return Err(Error::InvalidConfig("feature dimension must be at least 1".into()));
        }
        if labels.rows() != n {
            return Err(Error::DimensionMismatch {
                what: "label rows",
                expected: n,
                found: labels.rows(),
            });
        }
        if labels.cols() != tasks.len() {
            return Err(Error::DimensionMismatch {
                what: "label columns",
                expected: tasks.len(),
                found: labels.cols(),
            });
        }
        if mask.len() != n * tasks.len() {
            return Err(Error::DimensionMismatch {
                what: "mask cells",
                expected: n * tasks.len(),
                found: mask.len(),
            });
        }
        let mut seen = HashSet::new();
        for id in &sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateSample(id.clone()));
            }
        }
        let mut seen_tasks = HashSet::new();
        for t in &tasks {
            if !seen_tasks.insert(t) {
                return Err(Error::TaskMismatch(format!("task {t} listed twice")));
            }
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::NoLabels);
        }
        for (i, (&m, &v)) in mask.iter().zip(labels.as_slice()).enumerate() {
            if m && !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "non-finite label at row {}, task {}",
                    i / tasks.len(),
                    tasks[i % tasks.len()]
                )));
            }
        }
        if features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite feature value".into()));
        }
        Ok(Self {
            sample_ids,
            features,
            labels,
            mask,
            tasks,
        })
    }

    /// Dataset whose every provided label is present; `labels[i][t]` of
    /// `None` becomes a masked cell.
    pub fn from_optional_labels(
        sample_ids: Vec<String>,
        features: Matrix,
        labels: &[Vec<Option<f64>>],
        tasks: Vec<TaskId>,
    ) -> Result<Self> {
        let t = tasks.len();
        let mut values = Vec::with_capacity(labels.len() * t);
        let mut mask = Vec::with_capacity(labels.len() * t);
        for row in labels {
            if row.len() != t {
                return Err(Error::DimensionMismatch {
                    what: "label columns",
                    expected: t,
                    found: row.len(),
                });
            }
            for cell in row {
                values.push(cell.unwrap_or(MISSING));
                mask.push(cell.is_some());
            }
        }
        let labels = Matrix::from_vec(labels.len(), t, values);
        Self::new(sample_ids, features, labels, mask, tasks)
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn tasks(&self) -> &[TaskId] {
        &self.tasks
    }

    pub fn task_index(&self, task: &TaskId) -> Option<usize> {
        self.tasks.iter().position(|t| t == task)
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Row-major presence mask, `n × T`.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn is_labeled(&self, row: usize, task: usize) -> bool {
        self.mask[row * self.tasks.len() + task]
    }

    /// Label of a cell, `None` when masked.
    #[inline]
    pub fn label(&self, row: usize, task: usize) -> Option<f64> {
        if self.is_labeled(row, task) {
            Some(self.labels.get(row, task))
        } else {
            None
        }
    }

    /// Raw label storage including sentinels. Only meaningful together with
    /// [`Dataset::mask`].
    pub fn label_storage(&self) -> &Matrix {
        &self.labels
    }

    pub fn labeled_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn rows_with_task(&self, task: usize) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.is_labeled(r, task)).collect()
    }

    /// Subset of rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let t = self.tasks.len();
        let mut mask = Vec::with_capacity(rows.len() * t);
        for &r in rows {
            mask.extend_from_slice(&self.mask[r * t..(r + 1) * t]);
        }
        Self::new(
            rows.iter().map(|&r| self.sample_ids[r].clone()).collect(),
            self.features.select_rows(rows),
            self.labels.select_rows(rows),
            mask,
            self.tasks.clone(),
        )
    }

    /// Re-expresses the dataset over `tasks`; tasks it lacks become fully
    /// masked columns.
    pub fn project_tasks(&self, tasks: &[TaskId]) -> Result<Self> {
        let n = self.len();
        let mut labels = Matrix::filled(n, tasks.len(), MISSING);
        let mut mask = vec![false; n * tasks.len()];
        for (j, task) in tasks.iter().enumerate() {
            if let Some(src) = self.task_index(task) {
                for r in 0..n {
                    if let Some(v) = self.label(r, src) {
                        labels.set(r, j, v);
                        mask[r * tasks.len() + j] = true;
                    }
                }
            }
        }
        Self::new(
            self.sample_ids.clone(),
            self.features.clone(),
            labels,
            mask,
            tasks.to_vec(),
        )
    }

    /// Copy with the given mask; cells newly masked keep their stored value.
    pub fn with_mask(&self, mask: Vec<bool>) -> Result<Self> {
        Self::new(
            self.sample_ids.clone(),
            self.features.clone(),
            self.labels.clone(),
            mask,
            self.tasks.clone(),
        )
    }
}

/// Stacks datasets row-wise over the ordered union of their task lists.
pub fn merge_datasets(parts: &[Dataset]) -> Result<Dataset> {
    let first = parts.first().ok_or(Error::EmptyDataset)?;
    let d = first.dim();
    let mut tasks: Vec<TaskId> = Vec::new();
    for p in parts {
        if p.dim() != d {
            return Err(Error::DimensionMismatch {
                what: "feature dimension",
                expected: d,
                found: p.dim(),
            });
        }
        for t in p.tasks() {
            if !tasks.contains(t) {
                tasks.push(t.clone());
            }
        }
    }
    let t_all = tasks.len();
    let n: usize = parts.iter().map(Dataset::len).sum();
    let mut sample_ids = Vec::with_capacity(n);
    let mut labels = Matrix::filled(n, t_all, MISSING);
    let mut mask = vec![false; n * t_all];
    let mut row = 0;
    for p in parts {
        let cols: Vec<usize> = p
            .tasks()
            .iter()
            .map(|t| tasks.iter().position(|u| u == t).expect("task in union"))
            .collect();
        for r in 0..p.len() {
            sample_ids.push(p.sample_ids[r].clone());
            for (src, &dst) in cols.iter().enumerate() {
                if let Some(v) = p.label(r, src) {
                    labels.set(row, dst, v);
                    mask[row * t_all + dst] = true;
                }
            }
            row += 1;
        }
    }
    let feats: Vec<&Matrix> = parts.iter().map(|p| &p.features).collect();
    Dataset::new(sample_ids, Matrix::vstack(&feats), labels, mask, tasks)
}
