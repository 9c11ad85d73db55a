//! CSV run reports.
//!
//! Every table carries the config hash in its first column. Floats are written
//! with 17 significant digits so that values round-trip exactly, and files use
//! UTF-8 with LF line endings.

use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("refusing to merge rows from different configs ({0} and {1})")]
    MixedHash(String, String),
    #[error("table {table}: header {found:?} differs from {expected:?}")]
    Header { table: String, expected: Vec<String>, found: Vec<String> },
    #[error("table {table}: row has {got} cells, header has {expected}")]
    Width { table: String, got: usize, expected: usize },
}

/// A single CSV cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Float(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl Value {
    pub fn render(&self) -> String {
        match self {
            Value::Float(v) => format_float(*v),
            Value::Int(v) => v.to_string(),
            Value::Text(s) => s.clone(),
            Value::Empty => String::new(),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl From<i32> for Value {
    fn from(v: i32) -> Self {
        Value::Int(v as i64)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

impl<T: Into<Value>> From<Option<T>> for Value {
    fn from(v: Option<T>) -> Self {
        v.map(Into::into).unwrap_or(Value::Empty)
    }
}

/// 17 significant digits in scientific notation; non-finite values spelled out.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// A named table whose first column is the config hash.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub config_hash: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, config_hash: &str, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            config_hash: config_hash.into(),
            header: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) -> Result<(), ReportError> {
        if row.len() != self.header.len() {
            return Err(ReportError::Width { table: self.name.clone(), got: row.len(), expected: self.header.len() });
        }
        self.rows.push(row);
        Ok(())
    }

    fn full_header(&self) -> Vec<String> {
        std::iter::once("config_hash".to_string()).chain(self.header.iter().cloned()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(self.full_header()).expect("in-memory write");
        for row in &self.rows {
            let rec = std::iter::once(self.config_hash.clone()).chain(row.iter().map(Value::render));
            w.write_record(rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn path_in(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.csv", self.name))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, ReportError> {
        let path = self.path_in(dir);
        fs::write(&path, self.to_csv()).map_err(|source| ReportError::Io { path: path.display().to_string(), source })?;
        Ok(path)
    }

    /// Appends rows to an existing table file, refusing header or hash mismatches.
    pub fn append(&self, dir: &Path) -> Result<PathBuf, ReportError> {
        let path = self.path_in(dir);
        if !path.exists() {
            return self.write(dir);
        }
        let existing = read_table(&path)?;
        if existing.header != self.full_header() {
            return Err(ReportError::Header {
                table: self.name.clone(),
                expected: self.full_header(),
                found: existing.header,
            });
        }
        if let Some(h) = existing.hashes.iter().find(|h| **h != self.config_hash) {
            return Err(ReportError::MixedHash(h.clone(), self.config_hash.clone()));
        }
        let body = self.to_csv();
        let rows = body.split_once('\n').map(|(_, r)| r).unwrap_or("");
        let mut text = fs::read_to_string(&path).map_err(|source| ReportError::Io { path: path.display().to_string(), source })?;
        text.push_str(rows);
        fs::write(&path, text).map_err(|source| ReportError::Io { path: path.display().to_string(), source })?;
        Ok(path)
    }
}

/// Raw contents of a report file.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub hashes: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_table(path: &Path) -> Result<RawTable, ReportError> {
    let csv_err = |source| ReportError::Csv { path: path.display().to_string(), source };
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let mut hashes = Vec::new();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        hashes.push(rec.get(0).unwrap_or_default().to_string());
        rows.push(rec.iter().skip(1).map(String::from).collect());
    }
    Ok(RawTable { header, hashes, rows })
}

/// Concatenates report files of one table, refusing mixed config hashes.
pub fn merge_tables(paths: &[PathBuf]) -> Result<RawTable, ReportError> {
    let mut out: Option<RawTable> = None;
    for p in paths {
        let t = read_table(p)?;
        match &mut out {
            None => out = Some(t),
            Some(acc) => {
                if acc.header != t.header {
                    return Err(ReportError::Header {
                        table: p.display().to_string(),
                        expected: acc.header.clone(),
                        found: t.header,
                    });
                }
                acc.hashes.extend(t.hashes);
                acc.rows.extend(t.rows);
            }
        }
        let acc = out.as_ref().expect("set above");
        if let Some(first) = acc.hashes.first() {
            if let Some(other) = acc.hashes.iter().find(|h| *h != first) {
                return Err(ReportError::MixedHash(first.clone(), other.clone()));
            }
        }
    }
    Ok(out.unwrap_or(RawTable { header: Vec::new(), hashes: Vec::new(), rows: Vec::new() }))
}

/// Outcome of one gated acceptance check.
#[derive(Clone, Debug, PartialEq)]
pub struct CriterionResult {
    pub id: String,
    pub passed: bool,
    pub detail: String,
}

impl CriterionResult {
    pub fn new(id: &str, passed: bool, detail: impl Into<String>) -> Self {
        CriterionResult { id: id.into(), passed, detail: detail.into() }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.id, self.detail)
    }
}

/// Tables produced by one command, plus gated criteria.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub tables: Vec<Table>,
    pub criteria: Vec<CriterionResult>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    /// Adds the criteria as a table and writes every table into `dir`.
    pub fn write(&self, dir: &Path, config_hash: &str) -> Result<Vec<PathBuf>, ReportError> {
        fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.display().to_string(), source })?;
        let mut paths = Vec::new();
        for t in &self.tables {
            paths.push(t.write(dir)?);
        }
        if !self.criteria.is_empty() {
            let mut t = Table::new("criteria", config_hash, &["criterion", "status", "detail"]);
            for c in &self.criteria {
                t.push(vec![c.id.as_str().into(), if c.passed { "pass" } else { "fail" }.into(), c.detail.as_str().into()])?;
            }
            paths.push(t.write(dir)?);
        }
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(format_float(f64::INFINITY), "inf");
    }

    #[test]
    fn append_refuses_mixed_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Table::new("ladder", "aaaa", &["eps", "value"]);
        a.push(vec![0.25.into(), 1.0.into()]).unwrap();
        a.write(dir.path()).unwrap();
        a.append(dir.path()).unwrap();
        assert_eq!(read_table(&a.path_in(dir.path())).unwrap().rows.len(), 2);
        let mut b = Table::new("ladder", "bbbb", &["eps", "value"]);
        b.push(vec![0.125.into(), 2.0.into()]).unwrap();
        assert!(matches!(b.append(dir.path()), Err(ReportError::MixedHash(..))));
        let other = tempfile::tempdir().unwrap();
        let pb = b.write(other.path()).unwrap();
        assert!(matches!(merge_tables(&[a.path_in(dir.path()), pb]), Err(ReportError::MixedHash(..))));
    }

    #[test]
    fn row_width_checked() {
        let mut t = Table::new("x", "h", &["a"]);
        assert!(t.push(vec![Value::Empty, Value::Empty]).is_err());
        t.push(vec!["text, with comma".into()]).unwrap();
        assert!(t.to_csv().ends_with("h,\"text, with comma\"\n"));
    }
}
