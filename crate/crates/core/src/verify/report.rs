//! Experiment reports: config echo, metrics table, verdicts.
//!
//! A report is a pure function of the config and seed. Wall-clock time is
//! kept out of it and written to a separate timing file, so two runs of the
//! same config produce byte-identical `report.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::CsvTable;
use crate::verify::config::{ExperimentConfig, Provenance, Threshold};

/// Comparison applied to `observed` and `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    AtMost,
    Below,
    AtLeast,
    Above,
}

impl Rule {
    pub fn holds(self, observed: f64, threshold: f64) -> bool {
        match self {
            Rule::AtMost => observed <= threshold,
            Rule::Below => observed < threshold,
            Rule::AtLeast => observed >= threshold,
            Rule::Above => observed > threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub observed: f64,
    pub rule: Rule,
    pub threshold: f64,
    pub provenance: Provenance,
    /// Exploratory checks are reported but never fail a run.
    pub informational: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl Verdict {
    pub fn new(name: impl Into<String>, observed: f64, rule: Rule, threshold: f64, provenance: Provenance) -> Self {
        Self {
            name: name.into(),
            passed: rule.holds(observed, threshold),
            observed,
            rule,
            threshold,
            provenance,
            informational: false,
            note: String::new(),
        }
    }

    pub fn against(name: impl Into<String>, observed: f64, rule: Rule, threshold: &Threshold) -> Self {
        let mut v = Self::new(name, observed, rule, threshold.value, threshold.provenance);
        v.note = threshold.note.clone();
        v
    }

    pub fn informational(mut self) -> Self {
        self.informational = true;
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

/// Named columns of per-row metrics. Non-finite entries are written as
/// JSON `null` and read back as NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub columns: Vec<String>,
    #[serde(deserialize_with = "rows_with_nulls")]
    pub rows: Vec<Vec<f64>>,
}

fn rows_with_nulls<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vec<f64>>, D::Error> {
    let rows: Vec<Vec<Option<f64>>> = Deserialize::deserialize(d)?;
    Ok(rows.into_iter().map(|r| r.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect()).collect())
}

impl Metrics {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub version: String,
    pub model_hash: String,
    pub config: ExperimentConfig,
    pub metrics: Metrics,
    pub verdicts: Vec<Verdict>,
}

impl ExperimentReport {
    pub fn new(experiment: &str, config: &ExperimentConfig, model_hash: String, metrics: Metrics) -> Self {
        Self {
            experiment: experiment.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            model_hash,
            config: config.clone(),
            metrics,
            verdicts: Vec::new(),
        }
    }

    /// True when no non-informational verdict failed.
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed || v.informational)
    }

    pub fn failures(&self) -> Vec<&Verdict> {
        self.verdicts.iter().filter(|v| !v.passed && !v.informational).collect()
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn metrics_csv(&self) -> CsvTable {
        let cols: Vec<&str> = self.metrics.columns.iter().map(String::as_str).collect();
        let mut t = CsvTable::new(&cols)
            .with_meta("experiment", &self.experiment)
            .with_meta("model", &self.config.model.name)
            .with_meta("model_hash", &self.model_hash)
            .with_meta("seed", self.config.seed);
        for row in &self.metrics.rows {
            t.push(row.clone());
        }
        t
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Wall-clock record written next to a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub experiment: String,
    pub seconds: f64,
    pub threads: usize,
}

/// Verdicts that each value does not exceed its predecessor by more than
/// `slack` combined standard errors.
pub fn decreasing_verdicts(name: &str, labels: &[f64], values: &[f64], stderr: &[f64], slack: f64) -> Vec<Verdict> {
    (1..values.len())
        .map(|k| {
            let diff = values[k] - values[k - 1];
            let allowance = slack * (stderr[k].powi(2) + stderr[k - 1].powi(2)).sqrt();
            Verdict::new(
                format!("{name}[{}->{}]", labels[k - 1], labels[k]),
                diff,
                Rule::AtMost,
                allowance,
                Provenance::Analytic,
            )
            .with_note(format!("increase allowed up to {slack} combined stderr"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_and_trend() {
        assert!(Rule::AtMost.holds(1.0, 1.0));
        assert!(!Rule::Below.holds(1.0, 1.0));
        let v = decreasing_verdicts("x", &[0.1, 0.05, 0.01], &[3.0, 2.0, 2.1], &[0.1, 0.1, 0.1], 2.0);
        assert!(v[0].passed && v[1].passed);
        let v = decreasing_verdicts("x", &[0.1, 0.05], &[2.0, 2.5], &[0.1, 0.1], 2.0);
        assert!(!v[0].passed);
        assert_eq!(v[0].name, "x[0.1->0.05]");
    }

    #[test]
    fn report_round_trip_and_pass_logic() {
        let cfg = ExperimentConfig::for_model("logistic_feller");
        let mut m = Metrics::new(&["epsilon", "value"]);
        m.push(vec![0.1, 1.5]);
        let mut r = ExperimentReport::new("demo", &cfg, "h".into(), m);
        r.verdicts.push(Verdict::new("ok", 1.0, Rule::Below, 2.0, Provenance::Analytic));
        r.verdicts.push(Verdict::new("explore", 3.0, Rule::Below, 2.0, Provenance::Analytic).informational());
        assert!(r.passed());
        r.verdicts.push(Verdict::new("bad", 3.0, Rule::Below, 2.0, Provenance::Analytic));
        assert!(!r.passed());
        assert_eq!(r.failures().len(), 1);
        let back = ExperimentReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.metrics_csv().rows, vec![vec![0.1, 1.5]]);
        assert_eq!(r.metrics.column("value"), Some(vec![1.5]));
        r.metrics.push(vec![f64::NAN, 1.0 / 3.0]);
        let back = ExperimentReport::from_json(&r.to_json().unwrap()).unwrap();
        assert!(back.metrics.rows[1][0].is_nan());
        assert_eq!(back.metrics.rows[1][1], 1.0 / 3.0);
    }
}
