//! Masked, weighted multi-task training with Adam and per-epoch learning-rate
//! decay.

mod adam;
mod loss;
mod report;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamState};
pub use loss::{masked_loss, masked_loss_with_normalizer, MaskedLoss};
pub use report::{EpochRecord, RunReport, TaskMetrics};

use crate::dataset::{Dataset, TaskId};
use crate::error::{Error, Result};
use crate::eval::MetricPair;
use crate::linalg::Matrix;
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Constant,
    /// `lr · decay^epoch`
    Exponential,
    /// `lr · decay^(epoch / step_epochs)`
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scheduler {
    pub kind: SchedulerKind,
    pub decay: f64,
    pub step_epochs: usize,
}

impl Default for Scheduler {
    fn default() -> Self {
        Self {
            kind: SchedulerKind::Exponential,
            decay: 0.95,
            step_epochs: 10,
        }
    }
}

impl Scheduler {
    pub fn lr(&self, initial: f64, epoch: usize) -> f64 {
        let e = i32::try_from(epoch).unwrap_or(i32::MAX);
        match self.kind {
            SchedulerKind::Constant => initial,
            SchedulerKind::Exponential => initial * self.decay.powi(e),
            SchedulerKind::Step => {
                let k = i32::try_from(epoch / self.step_epochs.max(1)).unwrap_or(i32::MAX);
                initial * self.decay.powi(k)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub scheduler: Scheduler,
    pub epochs: usize,
    /// Loss weight per task; tasks not listed weigh 1.0.
    pub task_weights: BTreeMap<TaskId, f64>,
    pub seed: u64,
    pub shuffle: bool,
    /// Keep the epoch with the best mean validation PCC instead of the last.
    pub select_best: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            initial_lr: 0.001,
            scheduler: Scheduler::default(),
            epochs: 30,
            task_weights: BTreeMap::new(),
            seed: 0,
            shuffle: true,
            select_best: false,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::InvalidConfig("initial_lr must be finite and non-negative".into()));
        }
        if !(self.scheduler.decay > 0.0 && self.scheduler.decay <= 1.0) {
            return Err(Error::InvalidConfig("scheduler decay must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("adam epsilon must be positive".into()));
        }
        for (t, w) in &self.task_weights {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::InvalidConfig(format!("weight for task {t} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Weights aligned with `tasks`; at least one must be positive.
    pub fn weights_for(&self, tasks: &[TaskId]) -> Result<Vec<f64>> {
        let w: Vec<f64> = tasks
            .iter()
            .map(|t| self.task_weights.get(t).copied().unwrap_or(1.0))
            .collect();
        if !w.iter().any(|&v| v > 0.0) {
            return Err(Error::InvalidConfig("all task weights are zero".into()));
        }
        Ok(w)
    }
}

/// Label matrix with every masked cell set to zero, so no sentinel enters a
/// computation even by accident.
fn gated_labels(data: &Dataset, rows: &[usize], mask: &[bool]) -> Matrix {
    let t = data.n_tasks();
    let mut out = Matrix::zeros(rows.len(), t);
    for (i, &r) in rows.iter().enumerate() {
        for c in 0..t {
            let cell = r * t + c;
            if mask[cell] && data.mask()[cell] {
                out.set(i, c, data.label_storage().get(r, c));
            }
        }
    }
    out
}

/// Loss and parameter gradients of one batch.
///
/// `mask` overrides the dataset mask (it must only switch cells off);
/// `normalizer` overrides the unmasked-cell count in the loss denominator.
pub fn batch_gradients(
    params: &ModelParams,
    data: &Dataset,
    rows: &[usize],
    weights: &[f64],
    mask: Option<&[bool]>,
    normalizer: Option<f64>,
) -> Result<(MaskedLoss, Vec<f64>)> {
    let full_mask = mask.unwrap_or(data.mask());
    if full_mask.len() != data.mask().len() {
        return Err(Error::DimensionMismatch {
            what: "mask cells",
            expected: data.mask().len(),
            found: full_mask.len(),
        });
    }
    let t = data.n_tasks();
    let mut batch_mask = Vec::with_capacity(rows.len() * t);
    for &r in rows {
        for c in 0..t {
            let i = r * t + c;
            batch_mask.push(full_mask[i] && data.mask()[i]);
        }
    }
    let x = data.features().select_rows(rows);
    let y = gated_labels(data, rows, full_mask);
    let (pred, cache) = params.forward(&x)?;
    let loss = masked_loss_with_normalizer(&pred, &y, &batch_mask, weights, normalizer)?;
    let grads = params.backward(&cache, &loss.grads)?;
    Ok((loss, grads))
}

fn check_alignment(params: &ModelParams, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if params.tasks() != data.tasks() {
        return Err(Error::TaskMismatch(format!(
            "model tasks [{}] differ from dataset tasks [{}]",
            join(params.tasks()),
            join(data.tasks())
        )));
    }
    if params.architecture().input_dim != data.dim() {
        return Err(Error::DimensionMismatch {
            what: "feature dimension",
            expected: params.architecture().input_dim,
            found: data.dim(),
        });
    }
    Ok(())
}

fn join(tasks: &[TaskId]) -> String {
    tasks.iter().map(TaskId::as_str).collect::<Vec<_>>().join(",")
}

/// Mask to apply during one epoch, plus the number of cells it removed.
pub(crate) struct EpochMask {
    pub mask: Vec<bool>,
    pub trimmed: usize,
}

/// Trains on `data`, optionally reporting validation metrics every epoch.
///
/// Deterministic given `config.seed`: the row order is reshuffled each epoch
/// from one seeded stream, batches keep the partial last batch, and batches
/// without any unmasked cell are skipped without an optimiser step.
pub fn train(
    params: ModelParams,
    data: &Dataset,
    config: &TrainConfig,
    val: Option<&Dataset>,
) -> Result<(ModelParams, RunReport)> {
    run_training(params, data, config, val, |_, _| Ok(None))
}

pub(crate) fn run_training<F>(
    mut params: ModelParams,
    data: &Dataset,
    config: &TrainConfig,
    val: Option<&Dataset>,
    mut epoch_mask: F,
) -> Result<(ModelParams, RunReport)>
where
    F: FnMut(&ModelParams, usize) -> Result<Option<EpochMask>>,
{
    config.validate()?;
    check_alignment(&params, data)?;
    if config.select_best && val.is_none() {
        return Err(Error::InvalidConfig("select_best requires a validation set".into()));
    }
    let weights = config.weights_for(data.tasks())?;
    let mut adam = AdamState::new(params.len(), config.beta1, config.beta2, config.epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 0..config.epochs {
        let lr = config.scheduler.lr(config.initial_lr, epoch);
        let override_mask = epoch_mask(&params, epoch)?;
        let trimmed = override_mask.as_ref().map_or(0, |m| m.trimmed);
        let mask_ref = override_mask.as_ref().map(|m| m.mask.as_slice());
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut weighted_loss = 0.0;
        let mut cells = 0usize;
        let mut batches = 0usize;
        let mut skipped = 0usize;
        for rows in order.chunks(config.batch_size) {
            match batch_gradients(&params, data, rows, &weights, mask_ref, None) {
                Ok((loss, grads)) => {
                    adam_step(params.values_mut(), &grads, &mut adam, lr)?;
                    weighted_loss += loss.loss * loss.cells as f64;
                    cells += loss.cells;
                    batches += 1;
                }
                Err(Error::NoUnmaskedCells) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        let val_metrics = match val {
            Some(v) => Some(evaluate(&params, v)?),
            None => None,
        };
        if config.select_best {
            let score = val_metrics.as_ref().map_or(f64::NEG_INFINITY, mean_pcc);
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, epoch, params.clone()));
            }
        }
        epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: if cells > 0 { weighted_loss / cells as f64 } else { f64::NAN },
            batches,
            skipped_batches: skipped,
            trimmed_cells: trimmed,
            val_metrics,
        });
    }

    let selected_epoch = match best {
        Some((_, e, p)) => {
            params = p;
            Some(e)
        }
        None => config.epochs.checked_sub(1),
    };
    let train_metrics = evaluate(&params, data)?;
    let val_metrics = match val {
        Some(v) => Some(evaluate(&params, v)?),
        None => None,
    };
    let report = RunReport {
        model: String::new(),
        parameters: params.len(),
        training_data: Vec::new(),
        epochs,
        selected_epoch,
        train_metrics,
        val_metrics,
        checkpoint: None,
        config: config.clone(),
    };
    Ok((params, report))
}

fn mean_pcc(m: &TaskMetrics) -> f64 {
    let defined: Vec<f64> = m.iter().filter_map(|(_, p)| p.pcc).collect();
    if defined.is_empty() {
        f64::NEG_INFINITY
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

/// Per-task PCC and RMSE over the labelled cells of `data`.
///
/// Tasks are the model's; a task the dataset does not carry is reported
/// with undefined metrics.
pub fn evaluate(params: &ModelParams, data: &Dataset) -> Result<TaskMetrics> {
    let pred = params.predict(data.features())?;
    let mut out = Vec::with_capacity(params.tasks().len());
    for (t, task) in params.tasks().iter().enumerate() {
        let metric = match data.task_index(task) {
            None => MetricPair::UNDEFINED,
            Some(col) => {
                let mut p = Vec::new();
                let mut y = Vec::new();
                for r in 0..data.len() {
                    if let Some(v) = data.label(r, col) {
                        p.push(pred.get(r, t));
                        y.push(v);
                    }
                }
                MetricPair::from_series(&p, &y)?
            }
        };
        out.push((task.clone(), metric));
    }
    Ok(out)
}
