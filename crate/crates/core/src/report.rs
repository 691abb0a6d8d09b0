//! JSON report envelope with its CSV side files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Residuals below this mean the property holds.
pub const HOLDS_BELOW: f64 = 1e-7;
/// Residuals above this mean the property fails.
pub const FAILS_ABOVE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Holds,
    Fails,
    /// Between the two thresholds; rerun with tighter tolerances.
    Inconclusive,
}

impl Verdict {
    pub fn from_residual(r: f64) -> Verdict {
        if r < HOLDS_BELOW {
            Verdict::Holds
        } else if r > FAILS_ABOVE || !r.is_finite() {
            Verdict::Fails
        } else {
            Verdict::Inconclusive
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Tool {
    pub name: &'static str,
    pub version: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

/// Everything except `timing` is a pure function of the echoed config.
#[derive(Debug, Clone, Serialize)]
pub struct Report<T: Serialize> {
    pub schema_version: u32,
    pub tool: Tool,
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub results: T,
    pub timing: Timing,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &'static str, config: ExperimentConfig, results: T, wall_seconds: f64) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            tool: Tool {
                name: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
            },
            command,
            config,
            results,
            timing: Timing { wall_seconds },
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports contain only finite-key maps");
        s.push('\n');
        s
    }
}

/// Removes the `timing` key so two reports can be compared.
pub fn strip_timing(json: &str) -> Result<serde_json::Value> {
    let mut v: serde_json::Value =
        serde_json::from_str(json).map_err(|e| Error::config("<report>", e.to_string()))?;
    if let Some(o) = v.as_object_mut() {
        o.remove("timing");
    }
    Ok(v)
}

/// A CSV table with a header row. Cells are preformatted; numbers should
/// use the shortest round-trip form (`f64`'s `Display`).
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &'static str, header: &[&'static str]) -> Table {
        Table {
            name,
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    /// `<stem>.<name>.csv` next to the report.
    pub fn path_next_to(&self, report: &Path) -> PathBuf {
        let stem = report.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
        report.with_file_name(format!("{stem}.{}.csv", self.name))
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::config(dir.display().to_string(), e.to_string()))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_thresholds() {
        assert_eq!(Verdict::from_residual(1e-9), Verdict::Holds);
        assert_eq!(Verdict::from_residual(1e-5), Verdict::Inconclusive);
        assert_eq!(Verdict::from_residual(0.1), Verdict::Fails);
        assert_eq!(Verdict::from_residual(f64::NAN), Verdict::Fails);
    }

    #[test]
    fn table_renders_and_names() {
        let mut t = Table::new("ranks", &["k", "rank"]);
        t.push(vec![2.to_string(), 1.to_string()]);
        t.push(vec![3.to_string(), 1.to_string()]);
        assert_eq!(t.render(), "k,rank\n2,1\n3,1\n");
        assert_eq!(t.path_next_to(Path::new("out/run.json")), PathBuf::from("out/run.ranks.csv"));
    }

    #[test]
    fn timing_is_ignored() {
        let a = Report::new("x", ExperimentConfig::default(), 1, 0.5).to_json();
        let b = Report::new("x", ExperimentConfig::default(), 1, 7.0).to_json();
        assert_ne!(a, b);
        assert_eq!(strip_timing(&a).unwrap(), strip_timing(&b).unwrap());
    }
}
