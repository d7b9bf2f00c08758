use std::fmt::Write as _;

use super::TrainConfig;
use crate::dataset::TaskId;
use crate::eval::{render_table, MetricPair, ReportRow};

/// Metrics per model task, in model task order.
pub type TaskMetrics = Vec<(TaskId, MetricPair)>;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Unmasked-cell-weighted mean of the batch losses.
    pub train_loss: f64,
    pub batches: usize,
    pub skipped_batches: usize,
    pub trimmed_cells: usize,
    pub val_metrics: Option<TaskMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub model: String,
    pub parameters: usize,
    pub training_data: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: Option<usize>,
    /// Metrics of the returned parameters on the training set.
    pub train_metrics: TaskMetrics,
    pub val_metrics: Option<TaskMetrics>,
    pub checkpoint: Option<String>,
    pub config: TrainConfig,
}

impl RunReport {
    pub fn row(&self, metrics: &TaskMetrics) -> ReportRow {
        ReportRow {
            model: self.model.clone(),
            parameters: self.parameters.to_string(),
            training_data: self.training_data.join(", "),
            metrics: metrics.clone(),
        }
    }

    /// Key–value summary followed by metric tables.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model: {}", self.model);
        let _ = writeln!(s, "parameters: {}", self.parameters);
        let _ = writeln!(s, "training_data: {}", self.training_data.join(", "));
        let _ = writeln!(s, "epochs_run: {}", self.epochs.len());
        let _ = writeln!(
            s,
            "selected_epoch: {}",
            self.selected_epoch.map_or_else(|| "none".to_string(), |e| e.to_string())
        );
        let _ = writeln!(
            s,
            "checkpoint: {}",
            self.checkpoint.as_deref().unwrap_or("none")
        );
        let c = &self.config;
        let _ = writeln!(s, "config.batch_size: {}", c.batch_size);
        let _ = writeln!(s, "config.initial_lr: {:?}", c.initial_lr);
        let _ = writeln!(
            s,
            "config.scheduler: {:?} decay={:?} step_epochs={}",
            c.scheduler.kind, c.scheduler.decay, c.scheduler.step_epochs
        );
        let _ = writeln!(s, "config.epochs: {}", c.epochs);
        let weights: Vec<String> = c
            .task_weights
            .iter()
            .map(|(t, w)| format!("{t}={w:?}"))
            .collect();
        let _ = writeln!(s, "config.task_weights: {}", weights.join(","));
        let _ = writeln!(s, "config.seed: {}", c.seed);
        let _ = writeln!(s, "config.shuffle: {}", c.shuffle);
        let _ = writeln!(s, "config.select_best: {}", c.select_best);
        let _ = writeln!(
            s,
            "config.adam: beta1={:?} beta2={:?} epsilon={:?}",
            c.beta1, c.beta2, c.epsilon
        );
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "epoch {}: lr={:?} train_loss={:?} batches={} skipped={} trimmed={}",
                e.epoch, e.lr, e.train_loss, e.batches, e.skipped_batches, e.trimmed_cells
            );
        }
        s.push_str("\n[train]\n");
        s.push_str(&render_table(&[self.row(&self.train_metrics)], None));
        if let Some(v) = &self.val_metrics {
            s.push_str("\n[validation]\n");
            s.push_str(&render_table(&[self.row(v)], None));
        }
        s
    }
}
