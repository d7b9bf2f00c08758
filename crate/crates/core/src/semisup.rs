//! Teacher–student pseudo-labelling with per-epoch loss trimming.
//!
//! Missing label cells are filled once from a frozen teacher. The student is
//! trained on ground-truth and pseudo cells together; at the start of every
//! epoch the current student's squared error is computed for each cell and
//! the highest-loss fraction within the trimming scope is masked out for
//! that epoch.

use std::fmt;
use std::io::Write as _;
use std::path::Path;

use crate::dataset::{save_dataset, Dataset, TaskId};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::ModelParams;
use crate::train::{run_training, EpochMask, RunReport, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    GroundTruth,
    Pseudo,
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSource::GroundTruth => "ground_truth",
            LabelSource::Pseudo => "pseudo",
        })
    }
}

/// One or more frozen models that together predict every task.
///
/// A task is taken from the first model that outputs it, so a single
/// multi-task teacher and a list of single-task teachers are both valid.
#[derive(Debug, Clone)]
pub struct Teacher {
    pub name: String,
    pub models: Vec<ModelParams>,
}

impl Teacher {
    pub fn new(name: impl Into<String>, models: Vec<ModelParams>) -> Self {
        Self {
            name: name.into(),
            models,
        }
    }

    fn source_of(&self, task: &TaskId) -> Option<(usize, usize)> {
        self.models.iter().enumerate().find_map(|(m, p)| {
            p.tasks().iter().position(|t| t == task).map(|c| (m, c))
        })
    }
}

/// Dataset labels completed with teacher predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub tasks: Vec<TaskId>,
    pub values: Matrix,
    pub sources: Vec<LabelSource>,
    pub teacher: String,
    /// Teacher squared error on ground-truth cells.
    pub teacher_loss: Vec<Option<f64>>,
}

impl PseudoLabelSet {
    pub fn pseudo_count(&self) -> usize {
        self.sources
            .iter()
            .filter(|&&s| s == LabelSource::Pseudo)
            .count()
    }

    /// Fully labelled dataset over `base`'s samples and features.
    pub fn to_dataset(&self, base: &Dataset) -> Result<Dataset> {
        if base.len() != self.values.rows() || base.tasks() != self.tasks.as_slice() {
            return Err(Error::TaskMismatch(
                "pseudo-label set does not belong to this dataset".into(),
            ));
        }
        Dataset::new(
            base.sample_ids().to_vec(),
            base.features().clone(),
            self.values.clone(),
            vec![true; self.sources.len()],
            self.tasks.clone(),
        )
    }

    /// Writes the filled dataset directory plus `sources.csv`.
    pub fn export(&self, base: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        save_dataset(&self.to_dataset(base)?, dir)?;
        let path = dir.join("sources.csv");
        let mut buf = Vec::new();
        let header: Vec<&str> = std::iter::once("sample_id")
            .chain(self.tasks.iter().map(TaskId::as_str))
            .collect();
        let _ = writeln!(buf, "{}", header.join(","));
        let t = self.tasks.len();
        for (r, id) in base.sample_ids().iter().enumerate() {
            let cells: Vec<String> = self.sources[r * t..(r + 1) * t]
                .iter()
                .map(ToString::to_string)
                .collect();
            let _ = writeln!(buf, "{id},{}", cells.join(","));
        }
        std::fs::write(&path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Fills every masked cell of `data` with the teacher's prediction.
pub fn generate_pseudo_labels(teacher: &Teacher, data: &Dataset) -> Result<PseudoLabelSet> {
    let mut columns = Vec::with_capacity(data.n_tasks());
    for task in data.tasks() {
        let src = teacher
            .source_of(task)
            .ok_or_else(|| Error::TaskMismatch(format!("teacher does not predict task {task}")))?;
        columns.push(src);
    }
    let predictions = teacher
        .models
        .iter()
        .map(|m| m.predict(data.features()))
        .collect::<Result<Vec<Matrix>>>()?;
    let (n, t) = (data.len(), data.n_tasks());
    let mut values = Matrix::zeros(n, t);
    let mut sources = Vec::with_capacity(n * t);
    let mut teacher_loss = Vec::with_capacity(n * t);
    for r in 0..n {
        for (c, &(m, col)) in columns.iter().enumerate() {
            let pred = predictions[m].get(r, col);
            match data.label(r, c) {
                Some(y) => {
                    values.set(r, c, y);
                    sources.push(LabelSource::GroundTruth);
                    teacher_loss.push(Some((pred - y) * (pred - y)));
                }
                None => {
                    values.set(r, c, pred);
                    sources.push(LabelSource::Pseudo);
                    teacher_loss.push(None);
                }
            }
        }
    }
    Ok(PseudoLabelSet {
        tasks: data.tasks().to_vec(),
        values,
        sources,
        teacher: teacher.name.clone(),
        teacher_loss,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimScope {
    PseudoOnly,
    AllCells,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrimPolicy {
    pub fraction: f64,
    pub scope: TrimScope,
}

impl Default for TrimPolicy {
    fn default() -> Self {
        Self {
            fraction: 0.1,
            scope: TrimScope::PseudoOnly,
        }
    }
}

impl TrimPolicy {
    fn in_scope(&self, source: LabelSource) -> bool {
        match self.scope {
            TrimScope::AllCells => true,
            TrimScope::PseudoOnly => source == LabelSource::Pseudo,
        }
    }
}

/// Indices of cells kept after removing the `floor(p·N)` highest-loss cells
/// among the `N` cells in scope. Ties drop the lower index first. Cells
/// outside the scope are always kept. Output is ascending.
pub fn trim(losses: &[f64], sources: &[LabelSource], policy: &TrimPolicy) -> Result<Vec<usize>> {
    let p = policy.fraction;
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidTrimFraction(p));
    }
    if losses.len() != sources.len() {
        return Err(Error::LengthMismatch(losses.len(), sources.len()));
    }
    let mut scoped: Vec<usize> = (0..losses.len())
        .filter(|&i| policy.in_scope(sources[i]))
        .collect();
    if let Some(&i) = scoped.iter().find(|&&i| !losses[i].is_finite()) {
        return Err(Error::NonFiniteLoss(i));
    }
    let drop_count = (p * scoped.len() as f64).floor() as usize;
    let mut keep = vec![true; losses.len()];
    if drop_count > 0 {
        scoped.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
        for &i in &scoped[..drop_count] {
            keep[i] = false;
        }
    }
    Ok((0..losses.len()).filter(|&i| keep[i]).collect())
}

/// Trains `student` on `data` completed by `teacher`, trimming each epoch.
pub fn train_student(
    teacher: &Teacher,
    data: &Dataset,
    student: ModelParams,
    config: &TrainConfig,
    policy: &TrimPolicy,
    val: Option<&Dataset>,
) -> Result<(ModelParams, RunReport, PseudoLabelSet)> {
    if !(0.0..1.0).contains(&policy.fraction) {
        return Err(Error::InvalidTrimFraction(policy.fraction));
    }
    let labels = generate_pseudo_labels(teacher, data)?;
    let filled = labels.to_dataset(data)?;
    let t = filled.n_tasks();
    let trimming = policy.fraction > 0.0;
    let (params, report) = run_training(student, &filled, config, val, |params, _epoch| {
        if !trimming {
            return Ok(None);
        }
        let pred = params.predict(filled.features())?;
        let losses: Vec<f64> = (0..filled.len() * t)
            .map(|i| {
                let d = pred.get(i / t, i % t) - labels.values.get(i / t, i % t);
                d * d
            })
            .collect();
        let retained = trim(&losses, &labels.sources, policy)?;
        let mut mask = vec![false; losses.len()];
        for &i in &retained {
            mask[i] = true;
        }
        Ok(Some(EpochMask {
            trimmed: losses.len() - retained.len(),
            mask,
        }))
    })?;
    Ok((params, report, labels))
}
