//! Record tables: typed rows written as CSV or JSON, and per-grid-point
//! quantile summaries recomputable from the trial rows.

use std::fmt;
use std::io::Write;

use crate::stats::{mean, quantile};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
    Missing,
}

impl Value {
    /// Numeric reading: booleans count as 0/1, text is parsed, missing
    /// values are NaN.
    pub fn as_f64(&self) -> f64 {
        match self {
            Value::Int(i) => *i as f64,
            Value::Float(x) => *x,
            Value::Bool(b) => f64::from(u8::from(*b)),
            Value::Text(s) => match s.as_str() {
                "true" => 1.0,
                "false" => 0.0,
                s => s.parse().unwrap_or(f64::NAN),
            },
            Value::Missing => f64::NAN,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Int(i) => (*i).into(),
            Value::Float(x) if x.is_finite() => (*x).into(),
            Value::Float(x) => x.to_string().into(),
            Value::Bool(b) => (*b).into(),
            Value::Text(s) => s.clone().into(),
            Value::Missing => serde_json::Value::Null,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            // Shortest round-trip representation: parsing it back is exact.
            Value::Float(x) if *x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&x.abs()) => write!(f, "{x}"),
            Value::Float(x) => write!(f, "{x:e}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Text(s) => f.write_str(s),
            Value::Missing => Ok(()),
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Float(x)
    }
}

impl From<usize> for Value {
    fn from(x: usize) -> Self {
        Value::Int(x as i64)
    }
}

impl From<u64> for Value {
    fn from(x: u64) -> Self {
        // Seeds are written verbatim; they rarely exceed i64.
        i64::try_from(x).map_or_else(|_| Value::Text(x.to_string()), Value::Int)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_owned())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl<T: Into<Value>> From<Option<T>> for Value {
    fn from(v: Option<T>) -> Self {
        v.map_or(Value::Missing, Into::into)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_owned(),
            columns: columns.iter().map(|c| (*c).to_owned()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width for table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric values of a column.
    pub fn floats(&self, name: &str) -> Vec<f64> {
        let c = self.column(name).unwrap_or_else(|| panic!("no column {name} in {}", self.name));
        self.rows.iter().map(|r| r[c].as_f64()).collect()
    }

    /// Rows whose `key` column reads as `value`.
    pub fn filter(&self, key: &str, value: f64) -> Table {
        let c = self.column(key).unwrap_or_else(|| panic!("no column {key} in {}", self.name));
        Table {
            name: self.name.clone(),
            columns: self.columns.clone(),
            rows: self.rows.iter().filter(|r| r[c].as_f64() == value).cloned().collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(ToString::to_string))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 csv")
    }

    /// An array of row objects.
    pub fn to_json(&self) -> serde_json::Value {
        self.rows
            .iter()
            .map(|row| {
                self.columns
                    .iter()
                    .zip(row)
                    .map(|(c, v)| (c.clone(), v.to_json()))
                    .collect::<serde_json::Map<_, _>>()
                    .into()
            })
            .collect::<Vec<serde_json::Value>>()
            .into()
    }

    /// Reads a table back from CSV text; every cell comes back as text (empty
    /// cells as missing).
    pub fn from_csv_str(name: &str, text: &str) -> Result<Table, csv::Error> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let columns = reader.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            rows.push(
                record?
                    .iter()
                    .map(|s| if s.is_empty() { Value::Missing } else { Value::Text(s.to_owned()) })
                    .collect(),
            );
        }
        Ok(Table {
            name: name.to_owned(),
            columns,
            rows,
        })
    }
}

/// Groups `trials` by the `keys` columns (in order of first appearance) and
/// reports, for every metric, the 30/50/70% quantiles and the mean over the
/// finite values, plus the number of trial rows per group.
pub fn summarize(trials: &Table, keys: &[&str], metrics: &[&str]) -> Table {
    let key_idx: Vec<usize> = keys
        .iter()
        .map(|k| trials.column(k).unwrap_or_else(|| panic!("no key column {k}")))
        .collect();
    let metric_idx: Vec<usize> = metrics
        .iter()
        .map(|m| trials.column(m).unwrap_or_else(|| panic!("no metric column {m}")))
        .collect();

    let mut columns: Vec<String> = keys.iter().map(|k| (*k).to_owned()).collect();
    columns.push("trials".into());
    for m in metrics {
        for suffix in ["q30", "q50", "q70", "mean"] {
            columns.push(format!("{m}_{suffix}"));
        }
    }

    let mut groups: Vec<(Vec<String>, Vec<&Vec<Value>>)> = Vec::new();
    for row in &trials.rows {
        let key: Vec<String> = key_idx.iter().map(|&c| row[c].to_string()).collect();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, rows)) => rows.push(row),
            None => groups.push((key, vec![row])),
        }
    }

    let mut out = Table {
        name: format!("{}-summary", trials.name),
        columns,
        rows: Vec::new(),
    };
    for (key, rows) in groups {
        let mut record: Vec<Value> = key.into_iter().map(Value::Text).collect();
        record.push(Value::Int(rows.len() as i64));
        for &c in &metric_idx {
            let values: Vec<f64> = rows.iter().map(|r| r[c].as_f64()).collect();
            let finite: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
            for q in [0.3, 0.5, 0.7] {
                record.push(finite_or_missing(quantile(&finite, q)));
            }
            record.push(finite_or_missing(mean(&finite)));
        }
        out.rows.push(record);
    }
    out
}

fn finite_or_missing(x: f64) -> Value {
    if x.is_finite() {
        Value::Float(x)
    } else {
        Value::Missing
    }
}

/// Recomputes the summary from the written trial CSV and compares it with
/// the written summary CSV, byte for byte.
pub fn audit_summary(trials_csv: &str, summary_csv: &str, keys: &[&str], metrics: &[&str]) -> Result<(), String> {
    let trials = Table::from_csv_str("trials", trials_csv).map_err(|e| e.to_string())?;
    let recomputed = summarize(&trials, keys, metrics).to_csv_string();
    if recomputed == summary_csv {
        Ok(())
    } else {
        let line = recomputed
            .lines()
            .zip(summary_csv.lines())
            .position(|(a, b)| a != b)
            .map_or_else(|| "length".to_owned(), |l| format!("line {}", l + 1));
        Err(format!("summary differs from trial rows at {line}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Table {
        let mut t = Table::new("demo", &["p", "trial", "err", "hit"]);
        for (p, trial, err, hit) in [
            (10, 0, 0.5, false),
            (10, 1, 0.25, true),
            (20, 0, 1e-7, true),
            (10, 2, f64::NAN, false),
            (20, 1, 3e-6, true),
        ] {
            t.push(vec![Value::Int(p), Value::Int(trial), err.into(), hit.into()]);
        }
        t
    }

    #[test]
    fn summary_groups_in_order_and_skips_nan() {
        let s = summarize(&sample(), &["p"], &["err", "hit"]);
        assert_eq!(s.rows.len(), 2);
        assert_eq!(s.rows[0][0], Value::Text("10".into()));
        assert_eq!(s.rows[0][1], Value::Int(3));
        let q50 = s.column("err_q50").unwrap();
        assert_eq!(s.rows[0][q50], Value::Float(0.375));
        let hit = s.column("hit_mean").unwrap();
        assert_eq!(s.rows[0][hit].as_f64(), 1.0 / 3.0);
        assert_eq!(s.rows[1][hit].as_f64(), 1.0);
    }

    #[test]
    fn audit_detects_tampering() {
        let trials = sample();
        let summary = summarize(&trials, &["p"], &["err", "hit"]).to_csv_string();
        let trials_csv = trials.to_csv_string();
        assert!(audit_summary(&trials_csv, &summary, &["p"], &["err", "hit"]).is_ok());
        let tampered = summary.replacen("0.375", "0.376", 1);
        assert!(audit_summary(&trials_csv, &tampered, &["p"], &["err", "hit"]).is_err());
    }

    #[test]
    fn csv_text_round_trip_is_exact() {
        let t = sample();
        let back = Table::from_csv_str("demo", &t.to_csv_string()).unwrap();
        for (a, b) in t.floats("err").iter().zip(back.floats("err")) {
            assert!(a == &b || (a.is_nan() && b.is_nan()));
        }
    }
}
