//! Numeric CSV tables with a one-line metadata header.
//!
//! Layout:
//!
//! ```text
//! # meta: {"model":"…","seed":"42","version":"0.1.0"}
//! y,phi_tilde
//! 0,0
//! 0.5,0.3333333333333333
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every `f64` exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const META_PREFIX: &str = "# meta: ";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    pub meta: BTreeMap<String, String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        let mut meta = BTreeMap::new();
        meta.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        Self { meta, header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.into(), value.to_string());
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx =
            self.header.iter().position(|h| h == name).ok_or_else(|| Error::Parse(format!("missing column {name}")))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let meta = serde_json::to_string(&self.meta).unwrap_or_else(|_| "{}".into());
        let _ = writeln!(out, "{META_PREFIX}{meta}");
        let _ = writeln!(out, "{}", self.header.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format_value(*v)).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut header: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(json) = line.strip_prefix(META_PREFIX.trim_end()) {
                meta = serde_json::from_str(json.trim()).map_err(|e| Error::Parse(format!("meta line: {e}")))?;
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            match &header {
                None => header = Some(line.split(',').map(|h| h.trim().to_string()).collect()),
                Some(h) => {
                    let row = line
                        .split(',')
                        .map(|c| parse_value(c.trim()))
                        .collect::<std::result::Result<Vec<f64>, _>>()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
                    if row.len() != h.len() {
                        return Err(Error::Parse(format!(
                            "line {}: {} cells, expected {}",
                            lineno + 1,
                            row.len(),
                            h.len()
                        )));
                    }
                    rows.push(row);
                }
            }
        }
        let header = header.ok_or_else(|| Error::Parse("no header line".into()))?;
        Ok(Self { meta, header, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v}")
    }
}

fn parse_value(s: &str) -> std::result::Result<f64, std::num::ParseFloatError> {
    match s {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse(),
    }
}
