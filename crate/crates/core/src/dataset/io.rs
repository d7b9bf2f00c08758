//! Dataset directory format: `features.csv`, `labels.csv` (empty cell =
//! missing), `tasks.txt`, `samples.txt`. Decimals are written with the
//! shortest representation that parses back to the same double.

use std::fmt::Write as _;
use std::path::Path;

use super::{Dataset, TaskId, MISSING};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut features = String::new();
    for r in 0..ds.len() {
        let row: Vec<String> = ds.features().row(r).iter().map(|v| format!("{v:?}")).collect();
        features.push_str(&row.join(","));
        features.push('\n');
    }
    write(dir, "features.csv", &features)?;

    let mut labels = String::new();
    for r in 0..ds.len() {
        let row: Vec<String> = (0..ds.n_tasks())
            .map(|t| ds.label(r, t).map(|v| format!("{v:?}")).unwrap_or_default())
            .collect();
        labels.push_str(&row.join(","));
        labels.push('\n');
    }
    write(dir, "labels.csv", &labels)?;

    let mut tasks = String::new();
    for t in ds.tasks() {
        let _ = writeln!(tasks, "{t}");
    }
    write(dir, "tasks.txt", &tasks)?;

    let mut samples = String::new();
    for s in ds.sample_ids() {
        let _ = writeln!(samples, "{s}");
    }
    write(dir, "samples.txt", &samples)
}

fn write(dir: &Path, name: &str, content: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let samples = read_lines(&dir.join("samples.txt"))?;
    let tasks_path = dir.join("tasks.txt");
    let tasks = read_lines(&tasks_path)?
        .into_iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.parse::<TaskId>()
                .map_err(|e| Error::parse(&tasks_path, i as u64 + 1, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = samples.len();

    let feat_path = dir.join("features.csv");
    let feat_lines = read_lines(&feat_path)?;
    if feat_lines.len() != n {
        return Err(Error::DimensionMismatch {
            what: "features.csv rows",
            expected: n,
            found: feat_lines.len(),
        });
    }
    let mut d = None;
    let mut feats = Vec::new();
    for (i, line) in feat_lines.iter().enumerate() {
        let row = line
            .split(',')
            .map(|c| parse_decimal(c, &feat_path, i))
            .collect::<Result<Vec<f64>>>()?;
        match d {
            None => d = Some(row.len()),
            Some(k) if k != row.len() => {
                return Err(Error::parse(
                    &feat_path,
                    i as u64 + 1,
                    format!("expected {k} columns, found {}", row.len()),
                ))
            }
            _ => {}
        }
        feats.extend(row);
    }
    let features = Matrix::from_vec(n, d.unwrap_or(0), feats);

    let label_path = dir.join("labels.csv");
    let label_lines = read_lines(&label_path)?;
    if label_lines.len() != n {
        return Err(Error::DimensionMismatch {
            what: "labels.csv rows",
            expected: n,
            found: label_lines.len(),
        });
    }
    let t = tasks.len();
    let mut values = Vec::with_capacity(n * t);
    let mut mask = Vec::with_capacity(n * t);
    for (i, line) in label_lines.iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != t {
            return Err(Error::parse(
                &label_path,
                i as u64 + 1,
                format!("expected {t} columns, found {}", cells.len()),
            ));
        }
        for c in cells {
            if c.trim().is_empty() {
                values.push(MISSING);
                mask.push(false);
            } else {
                values.push(parse_decimal(c, &label_path, i)?);
                mask.push(true);
            }
        }
    }
    Dataset::new(samples, features, Matrix::from_vec(n, t, values), mask, tasks)
}

fn parse_decimal(cell: &str, path: &Path, row: usize) -> Result<f64> {
    match cell.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::parse(
            path,
            row as u64 + 1,
            format!("invalid decimal '{cell}'"),
        )),
    }
}
