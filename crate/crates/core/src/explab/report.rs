//! Report types and their on-disk forms (JSON, CSV, SVG).

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use crate::error::Result;
use crate::linalg::FactorStats;

/// Version of the JSON layout of [`ExperimentReport`].
pub const SCHEMA_VERSION: u32 = 1;

/// One row of a reported curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub t: f64,
    pub estimate: f64,
    pub std_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<SeriesPoint>,
}

/// A pass/fail decision together with the rule that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub rule: String,
    pub estimate: f64,
    pub std_error: f64,
    pub target: f64,
    pub pass: bool,
}

impl Check {
    /// `|estimate - target| <= k * se`.
    pub fn within_se(
        name: impl Into<String>,
        estimate: f64,
        se: f64,
        target: f64,
        k: f64,
    ) -> Check {
        Check {
            name: name.into(),
            rule: format!("|estimate - target| <= {k} SE"),
            estimate,
            std_error: se,
            target,
            pass: (estimate - target).abs() <= k * se,
        }
    }

    /// `|estimate - target| <= max(k SE, rel |target|)`.
    pub fn within_se_or_relative(
        name: impl Into<String>,
        estimate: f64,
        se: f64,
        target: f64,
        k: f64,
        rel: f64,
    ) -> Check {
        Check {
            name: name.into(),
            rule: format!("|estimate - target| <= max({k} SE, {rel} |target|)"),
            estimate,
            std_error: se,
            target,
            pass: (estimate - target).abs() <= (k * se).max(rel * target.abs()),
        }
    }

    pub fn custom(
        name: impl Into<String>,
        rule: impl Into<String>,
        estimate: f64,
        std_error: f64,
        target: f64,
        pass: bool,
    ) -> Check {
        Check {
            name: name.into(),
            rule: rule.into(),
            estimate,
            std_error,
            target,
            pass,
        }
    }
}

/// Summary of one experiment; reproducible bit-for-bit from its config.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub experiment: String,
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
    /// Inputs of runs that are not driven by an [`ExperimentConfig`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inputs: Option<serde_json::Value>,
    pub series: Vec<Series>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor_stats: Option<FactorStats>,
    pub pass: bool,
}

impl ExperimentReport {
    pub fn new(config: &ExperimentConfig) -> Self {
        let mut r = Self::standalone(config.experiment.name(), serde_json::Value::Null);
        r.config = Some(config.clone());
        r.inputs = None;
        r
    }

    pub fn standalone(experiment: &str, inputs: serde_json::Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: None,
            inputs: Some(inputs),
            series: Vec::new(),
            checks: Vec::new(),
            notes: Vec::new(),
            factor_stats: None,
            pass: true,
        }
    }

    pub fn push_check(&mut self, c: Check) {
        self.pass &= c.pass;
        self.checks.push(c);
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One line per check, `PASS`/`FAIL` first.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{} {}: estimate {:.6} (SE {:.3e}) target {:.6} [{}]",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.estimate,
                c.std_error,
                c.target,
                c.rule
            );
        }
        s
    }
}

/// Per-replicate numbers behind a report, written as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DataTable {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format_cell(*v)).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

fn format_cell(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:e}")
    }
}

/// Report plus its data tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub tables: Vec<DataTable>,
}

/// Timing and environment of a run, kept apart from the reproducible report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunInfo {
    pub wall_time_seconds: f64,
    pub threads: usize,
}

impl ExperimentOutput {
    /// Writes `report.json`, `run_info.json`, one CSV per table, a
    /// `series.csv` with all curves and optionally `series.svg`.
    pub fn write_to(&self, dir: &Path, info: &RunInfo, svg: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.report.to_json()?)?;
        std::fs::write(
            dir.join("run_info.json"),
            serde_json::to_string_pretty(info)?,
        )?;
        for t in &self.tables {
            let f = std::fs::File::create(dir.join(format!("{}.csv", t.name)))?;
            t.write_csv(std::io::BufWriter::new(f))?;
        }
        let mut s = String::from("series,t,estimate,std_error,target\n");
        for ser in &self.report.series {
            for p in &ser.points {
                let _ = writeln!(
                    s,
                    "{},{},{:e},{:e},{}",
                    ser.name,
                    p.t,
                    p.estimate,
                    p.std_error,
                    p.target.map_or(String::new(), |v| format!("{v:e}"))
                );
            }
        }
        std::fs::write(dir.join("series.csv"), s)?;
        if svg {
            std::fs::write(
                dir.join("series.svg"),
                super::svg::line_plot(&self.report.experiment, &self.report.series),
            )?;
        }
        Ok(())
    }
}
