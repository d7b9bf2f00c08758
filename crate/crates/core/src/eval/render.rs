use std::fmt::Write as _;

use super::MetricPair;
use crate::dataset::TaskId;
use crate::rater::{CrossValReport, HISTOGRAM_BINS, HISTOGRAM_BIN_WIDTH, HISTOGRAM_LO};

/// PCC as a percentage with two decimals, or `n/a`.
pub fn format_pcc(pcc: Option<f64>) -> String {
    match pcc {
        Some(v) => format!("{:.2}%", v * 100.0),
        None => "n/a".to_string(),
    }
}

/// RMSE with four decimals, or `n/a`.
pub fn format_rmse(rmse: Option<f64>) -> String {
    match rmse {
        Some(v) => format!("{v:.4}"),
        None => "n/a".to_string(),
    }
}

/// `"76.57% / 0.5853"` style cell.
pub fn format_pair(m: &MetricPair) -> String {
    format!("{} / {}", format_pcc(m.pcc), format_rmse(m.rmse))
}

/// One model row of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub parameters: String,
    pub training_data: String,
    pub metrics: Vec<(TaskId, MetricPair)>,
}

impl ReportRow {
    fn metric(&self, task: &TaskId) -> MetricPair {
        self.metrics
            .iter()
            .find(|(t, _)| t == task)
            .map_or(MetricPair::UNDEFINED, |(_, m)| *m)
    }
}

fn task_columns(rows: &[ReportRow], tasks: Option<&[TaskId]>) -> Vec<TaskId> {
    if let Some(t) = tasks {
        return t.to_vec();
    }
    let mut out: Vec<TaskId> = Vec::new();
    for row in rows {
        for (t, _) in &row.metrics {
            if !out.contains(t) {
                out.push(t.clone());
            }
        }
    }
    out
}

fn table_cells(rows: &[ReportRow], tasks: &[TaskId]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec![
        "Model".to_string(),
        "# parameters".to_string(),
        "Training data".to_string(),
    ];
    header.extend(tasks.iter().map(|t| format!("PCC {t}")));
    header.extend(tasks.iter().map(|t| format!("RMSE {t}")));
    let body = rows
        .iter()
        .map(|row| {
            let mut cells = vec![
                row.model.clone(),
                row.parameters.clone(),
                row.training_data.clone(),
            ];
            cells.extend(tasks.iter().map(|t| format_pcc(row.metric(t).pcc)));
            cells.extend(tasks.iter().map(|t| format_rmse(row.metric(t).rmse)));
            cells
        })
        .collect();
    (header, body)
}

/// Fixed-width text table with one PCC and one RMSE column per task.
///
/// When `tasks` is `None` the columns are the union of the rows' tasks in
/// first-seen order.
pub fn render_table(rows: &[ReportRow], tasks: Option<&[TaskId]>) -> String {
    let tasks = task_columns(rows, tasks);
    let (header, body) = table_cells(rows, &tasks);
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for cells in &body {
        for (w, c) in widths.iter_mut().zip(cells) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        padded.join(" | ").trim_end().to_string()
    };
    let mut out = String::new();
    out.push_str(&line(&header));
    out.push('\n');
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&rule.join("-+-"));
    out.push('\n');
    for cells in &body {
        out.push_str(&line(cells));
        out.push('\n');
    }
    out
}

/// Same content as [`render_table`] as CSV, values at full precision.
pub fn render_csv(rows: &[ReportRow], tasks: Option<&[TaskId]>) -> String {
    let tasks = task_columns(rows, tasks);
    let mut out = String::from("model,parameters,training_data,task,n,pcc,rmse\n");
    for row in rows {
        for t in &tasks {
            let m = row.metric(t);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                csv_field(&row.model),
                csv_field(&row.parameters),
                csv_field(&row.training_data),
                t,
                m.n,
                m.pcc.map_or_else(|| "n/a".to_string(), |v| format!("{v:?}")),
                m.rmse.map_or_else(|| "n/a".to_string(), |v| format!("{v:?}")),
            );
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-rater, per-fold RMSE changes of a cross-validation run.
pub fn crossval_csv(report: &CrossValReport) -> String {
    let mut out = String::from(
        "fold,rater_id,method,samples,rmse_loo_before,rmse_loo_after,delta_loo,\
         rmse_holdout_before,rmse_holdout_after,delta_holdout\n",
    );
    for e in &report.entries {
        let _ = writeln!(
            out,
            "{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
            e.fold,
            csv_field(&e.rater_id),
            e.method,
            e.samples,
            e.rmse_loo_before,
            e.rmse_loo_after,
            e.delta_loo(),
            e.rmse_holdout_before,
            e.rmse_holdout_after,
            e.delta_holdout(),
        );
    }
    out
}

/// Binned ΔRMSE counts, one row per (method, reference, fold, bin); fold
/// `mean` holds the across-fold average.
pub fn histogram_csv(report: &CrossValReport) -> String {
    let mut out = String::from("method,reference,fold,bin_lo,bin_hi,count\n");
    for h in &report.histograms {
        let fold = h
            .fold
            .map_or_else(|| "mean".to_string(), |f| f.to_string());
        for (i, count) in h.counts.iter().enumerate().take(HISTOGRAM_BINS) {
            let lo = HISTOGRAM_LO + i as f64 * HISTOGRAM_BIN_WIDTH;
            let _ = writeln!(
                out,
                "{},{},{},{:.2},{:.2},{}",
                h.method,
                h.reference,
                fold,
                lo,
                lo + HISTOGRAM_BIN_WIDTH,
                count
            );
        }
    }
    out
}
