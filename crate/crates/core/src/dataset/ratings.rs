use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use super::TaskId;
use crate::error::{Error, Result};
use crate::eval::compensated_sum;

/// One rater's score of one sample for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingRecord {
    pub sample_id: String,
    pub rater_id: String,
    pub task: TaskId,
    pub value: f64,
}

type Key = (TaskId, String);

/// Indexed collection of ratings; `(sample, rater, task)` is unique.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingTable {
    records: Vec<RatingRecord>,
    by_sample: BTreeMap<Key, Vec<usize>>,
    by_rater: BTreeMap<Key, Vec<usize>>,
    lookup: HashMap<(TaskId, String, String), usize>,
}

impl RatingTable {
    pub fn from_records(records: Vec<RatingRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::NoRecords);
        }
        let mut by_sample: BTreeMap<Key, Vec<usize>> = BTreeMap::new();
        let mut by_rater: BTreeMap<Key, Vec<usize>> = BTreeMap::new();
        let mut lookup = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let key = (r.task.clone(), r.sample_id.clone(), r.rater_id.clone());
            if lookup.insert(key, i).is_some() {
                return Err(Error::DuplicateRating {
                    sample: r.sample_id.clone(),
                    rater: r.rater_id.clone(),
                    task: r.task.clone(),
                });
            }
            by_sample
                .entry((r.task.clone(), r.sample_id.clone()))
                .or_default()
                .push(i);
            by_rater
                .entry((r.task.clone(), r.rater_id.clone()))
                .or_default()
                .push(i);
        }
        Ok(Self {
            records,
            by_sample,
            by_rater,
            lookup,
        })
    }

    pub fn records(&self) -> &[RatingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn tasks(&self) -> Vec<TaskId> {
        let set: std::collections::BTreeSet<&TaskId> = self.records.iter().map(|r| &r.task).collect();
        set.into_iter().cloned().collect()
    }

    /// Samples rated for `task`, sorted by id.
    pub fn samples(&self, task: &TaskId) -> Vec<&str> {
        self.by_sample
            .keys()
            .filter(|(t, _)| t == task)
            .map(|(_, s)| s.as_str())
            .collect()
    }

    /// Raters with at least one rating for `task`, sorted by id.
    pub fn raters(&self, task: &TaskId) -> Vec<&str> {
        self.by_rater
            .keys()
            .filter(|(t, _)| t == task)
            .map(|(_, r)| r.as_str())
            .collect()
    }

    /// Ratings of one sample for one task, in insertion order.
    pub fn sample_ratings(&self, task: &TaskId, sample: &str) -> Vec<&RatingRecord> {
        self.by_sample
            .get(&(task.clone(), sample.to_string()))
            .map(|idx| idx.iter().map(|&i| &self.records[i]).collect())
            .unwrap_or_default()
    }

    /// Ratings given by one rater for one task, in insertion order.
    pub fn rater_ratings(&self, task: &TaskId, rater: &str) -> Vec<&RatingRecord> {
        self.by_rater
            .get(&(task.clone(), rater.to_string()))
            .map(|idx| idx.iter().map(|&i| &self.records[i]).collect())
            .unwrap_or_default()
    }

    /// N_s: number of raters of `sample` for `task`.
    pub fn rater_count(&self, task: &TaskId, sample: &str) -> usize {
        self.by_sample
            .get(&(task.clone(), sample.to_string()))
            .map_or(0, Vec::len)
    }

    /// S_j: number of samples rated by `rater` for `task`.
    pub fn sample_count(&self, task: &TaskId, rater: &str) -> usize {
        self.by_rater
            .get(&(task.clone(), rater.to_string()))
            .map_or(0, Vec::len)
    }

    pub fn rating(&self, task: &TaskId, sample: &str, rater: &str) -> Option<f64> {
        self.lookup
            .get(&(task.clone(), sample.to_string(), rater.to_string()))
            .map(|&i| self.records[i].value)
    }

    /// Same records and indices with values replaced via `f`.
    pub fn map_values(&self, mut f: impl FnMut(&RatingRecord) -> f64) -> Self {
        let mut out = self.clone();
        for rec in &mut out.records {
            rec.value = f(rec);
        }
        out
    }

    /// Values clamped into `[lo, hi]`.
    pub fn clipped(&self, lo: f64, hi: f64) -> Self {
        self.map_values(|r| r.value.clamp(lo, hi))
    }
}

/// Mean rating per sample for `task`.
///
/// Values are summed in sorted order so the result does not depend on record
/// order.
pub fn aggregate_mos(table: &RatingTable, task: &TaskId) -> Result<BTreeMap<String, f64>> {
    let samples = table.samples(task);
    if samples.is_empty() {
        return Err(Error::NoRatings {
            sample: "*".into(),
            task: task.clone(),
        });
    }
    let ids: Vec<String> = samples.into_iter().map(str::to_string).collect();
    aggregate_mos_for(table, task, &ids)
}

/// Mean rating for each listed sample; errors on a sample without ratings.
pub fn aggregate_mos_for(
    table: &RatingTable,
    task: &TaskId,
    samples: &[String],
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for s in samples {
        let mut values: Vec<f64> = table
            .sample_ratings(task, s)
            .iter()
            .map(|r| r.value)
            .collect();
        if values.is_empty() {
            return Err(Error::NoRatings {
                sample: s.clone(),
                task: task.clone(),
            });
        }
        values.sort_by(f64::total_cmp);
        out.insert(s.clone(), compensated_sum(values.iter().copied()) / values.len() as f64);
    }
    Ok(out)
}

const HEADER: [&str; 4] = ["sample_id", "rater_id", "task", "value"];

/// Reads a ratings CSV (`sample_id,rater_id,task,value`).
///
/// Integer values must lie in 1..=5; decimal values (corrected ratings) are
/// accepted as long as they are finite.
pub fn load_ratings(path: impl AsRef<Path>) -> Result<RatingTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut header_seen = false;
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(path, line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if !header_seen {
            header_seen = true;
            if row.iter().map(str::trim).ne(HEADER.iter().copied()) {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected header '{}'", HEADER.join(",")),
                ));
            }
            continue;
        }
        if row.len() != 4 {
            return Err(Error::parse(
                path,
                line,
                format!("expected 4 fields, found {}", row.len()),
            ));
        }
        let sample_id = row[0].trim().to_string();
        let rater_id = row[1].trim().to_string();
        if sample_id.is_empty() || rater_id.is_empty() {
            return Err(Error::parse(path, line, "empty sample or rater id"));
        }
        let task: TaskId = row[2]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("invalid task '{}'", &row[2])))?;
        let value = parse_rating(row[3].trim(), line).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::parse(path, line, message),
            other => other,
        })?;
        if !seen.insert((sample_id.clone(), rater_id.clone(), task.clone())) {
            return Err(Error::parse(
                path,
                line,
                format!("duplicate rating for sample '{sample_id}', rater '{rater_id}', task {task}"),
            ));
        }
        records.push(RatingRecord {
            sample_id,
            rater_id,
            task,
            value,
        });
    }
    RatingTable::from_records(records)
}

fn parse_rating(token: &str, line: u64) -> Result<f64> {
    if let Ok(v) = token.parse::<i64>() {
        if !(1..=5).contains(&v) {
            return Err(Error::RatingOutOfRange { line, value: v });
        }
        return Ok(v as f64);
    }
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::parse("", line, format!("invalid rating value '{token}'"))),
    }
}

/// Values on the raw scale are written as integers, everything else as a
/// round-trippable decimal.
pub(crate) fn format_rating(v: f64) -> String {
    if v.fract() == 0.0 && (1.0..=5.0).contains(&v) {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

pub fn write_ratings(table: &RatingTable, out: &mut impl Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in table.records() {
        w.write_record([
            r.sample_id.as_str(),
            r.rater_id.as_str(),
            r.task.as_str(),
            &format_rating(r.value),
        ])?;
    }
    w.flush()
}

pub fn save_ratings(table: &RatingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_ratings(table, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn rec(s: &str, j: &str, v: f64) -> RatingRecord {
        RatingRecord {
            sample_id: s.into(),
            rater_id: j.into(),
            task: TaskId::Mos,
            value: v,
        }
    }

    #[test]
    fn load_counts() {
        let f = write_tmp("sample_id,rater_id,task,value\ns1,r1,MOS,4\ns1,r2,MOS,5\ns2,r1,MOS,3\n");
        let t = load_ratings(f.path()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.rater_count(&TaskId::Mos, "s1"), 2);
        assert_eq!(t.sample_count(&TaskId::Mos, "r1"), 2);
        assert_eq!(t.rating(&TaskId::Mos, "s2", "r1"), Some(3.0));
    }

    #[test]
    fn load_empty_file() {
        let f = write_tmp("");
        assert!(matches!(load_ratings(f.path()), Err(Error::NoRecords)));
        let f = write_tmp("sample_id,rater_id,task,value\n");
        assert!(matches!(load_ratings(f.path()), Err(Error::NoRecords)));
    }

    #[test]
    fn load_out_of_range_cites_line() {
        let f = write_tmp("sample_id,rater_id,task,value\ns1,r1,MOS,6\n");
        match load_ratings(f.path()) {
            Err(Error::RatingOutOfRange { line, value }) => {
                assert_eq!(line, 2);
                assert_eq!(value, 6);
            }
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("sample_id,rater_id,task,value\ns1,r1,MOS,0\n");
        assert!(load_ratings(f.path()).is_err());
    }

    #[test]
    fn load_rejects_duplicates_and_garbage() {
        let f = write_tmp("sample_id,rater_id,task,value\ns1,r1,MOS,4\ns1,r1,MOS,2\n");
        match load_ratings(f.path()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("duplicate"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("sample_id,rater_id,task,value\ns1,r1,MOS,abc\n");
        assert!(matches!(load_ratings(f.path()), Err(Error::Parse { line: 2, .. })));
        let f = write_tmp("sample,rater,task,value\ns1,r1,MOS,3\n");
        assert!(matches!(load_ratings(f.path()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn corrected_decimals_load() {
        let f = write_tmp("sample_id,rater_id,task,value\ns1,r1,MOS,5.75\ns2,r1,MOS,-0.25\n");
        let t = load_ratings(f.path()).unwrap();
        assert_eq!(t.rating(&TaskId::Mos, "s1", "r1"), Some(5.75));
        assert_eq!(t.rating(&TaskId::Mos, "s2", "r1"), Some(-0.25));
    }

    #[test]
    fn save_load_roundtrip_is_exact() {
        let t = RatingTable::from_records(vec![
            rec("s1", "r1", 4.0),
            rec("s1", "r2", 0.1 + 0.2),
            rec("s2", "r1", 6.0),
        ])
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_ratings(&t, f.path()).unwrap();
        assert_eq!(load_ratings(f.path()).unwrap(), t);
    }

    #[test]
    fn aggregate_examples() {
        let t = RatingTable::from_records(vec![
            rec("a", "1", 4.0),
            rec("a", "2", 5.0),
            rec("a", "3", 3.0),
            rec("b", "1", 5.0),
            rec("c", "1", 1.0),
            rec("c", "2", 1.0),
            rec("c", "3", 5.0),
            rec("c", "4", 5.0),
        ])
        .unwrap();
        let m = aggregate_mos(&t, &TaskId::Mos).unwrap();
        assert_eq!(m["a"], 4.0);
        assert_eq!(m["b"], 5.0);
        assert_eq!(m["c"], 3.0);
        assert!(aggregate_mos(&t, &TaskId::Sig).is_err());
        assert!(matches!(
            aggregate_mos_for(&t, &TaskId::Mos, &["zzz".into()]),
            Err(Error::NoRatings { .. })
        ));
    }

    #[test]
    fn duplicate_records_rejected() {
        let err = RatingTable::from_records(vec![rec("a", "1", 4.0), rec("a", "1", 3.0)]);
        assert!(matches!(err, Err(Error::DuplicateRating { .. })));
    }
}
