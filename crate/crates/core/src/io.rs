//! Text output: comma-separated tables with `# key: value` metadata lines,
//! newline-delimited JSON, and content hashing.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, IoError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.display().to_string(), source }
}

/// Integral values print as integers, everything else with 17 significant digits.
pub fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        format!("{}", v as i64)
    } else if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(header: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self { meta: Vec::new(), header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format_number(*v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table = CsvTable::default();
        let mut header_seen = false;
        for (lineno, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .trim_start()
                    .split_once(": ")
                    .ok_or_else(|| IoError::Parse(format!("line {}: malformed metadata", lineno + 1)))?;
                table.meta.push((k.to_string(), v.to_string()));
            } else if line.is_empty() {
                continue;
            } else if !header_seen {
                table.header = line.split(',').map(str::to_string).collect();
                header_seen = true;
            } else {
                let row = line
                    .split(',')
                    .map(|c| c.parse::<f64>().map_err(|e| IoError::Parse(format!("line {}: {e}", lineno + 1))))
                    .collect::<Result<Vec<f64>>>()?;
                if row.len() != table.header.len() {
                    return Err(IoError::Parse(format!(
                        "line {}: {} cells, header has {}",
                        lineno + 1,
                        row.len(),
                        table.header.len()
                    )));
                }
                table.rows.push(row);
            }
        }
        if !header_seen {
            return Err(IoError::Parse("missing header row".into()));
        }
        Ok(table)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }
}

/// One JSON object per line.
pub fn write_ndjson<T: Serialize>(out: &mut impl Write, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n").map_err(|source| IoError::Io { path: "<stream>".into(), source })?;
    }
    Ok(())
}

/// SHA-256 over `name\0len\0bytes` for each file, in the given order.
pub fn content_hash<'a>(files: impl IntoIterator<Item = (&'a str, &'a [u8])>) -> String {
    let mut h = Sha256::new();
    for (name, bytes) in files {
        h.update(name.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update([0]);
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_round_trip() {
        let mut t = CsvTable::new(["mu", "U"]).meta("model", "pitchfork").meta("note", "a: b");
        t.push(vec![-2.0, 0.1]);
        t.push(vec![1.0 / 3.0, f64::MIN_POSITIVE]);
        let back = CsvTable::parse(&t.render()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.meta_value("note"), Some("a: b"));
        assert_eq!(back.column("U").unwrap()[0], 0.1);
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(CsvTable::parse("a,b\n1\n").is_err());
        assert!(CsvTable::parse("a,b\n1,x\n").is_err());
        assert!(CsvTable::parse("# only: meta\n").is_err());
    }

    #[test]
    fn hash_depends_on_names_and_bytes() {
        let a = content_hash([("x", b"12".as_slice()), ("y", b"3".as_slice())]);
        let b = content_hash([("x", b"1".as_slice()), ("y", b"23".as_slice())]);
        assert_ne!(a, b);
        assert_eq!(a, content_hash([("x", b"12".as_slice()), ("y", b"3".as_slice())]));
        assert_eq!(a.len(), 64);
    }

    proptest! {
        #[test]
        fn numbers_parse_back_exactly(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(format_number(v).parse::<f64>().unwrap(), v);
        }
    }
}
