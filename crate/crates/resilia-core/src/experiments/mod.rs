//! End-to-end case studies exercising the solvers on concrete plants,
//! with uniform reporting so results can be saved and compared.

pub mod mpc_wind;
pub mod navigation;
pub mod shepherd;

pub use mpc_wind::{run_mpc_wind, MpcWindParams};
pub use navigation::{run_navigation, NavigationParams};
pub use shepherd::{run_shepherd, ShepherdParams};

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::duality::{SolveReport, SolveStatus};
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;

/// Whether a case study runs the hard worst-case baseline or the
/// slack-coupled solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentMode {
    Robust,
    Resilient,
}

impl fmt::Display for ExperimentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentMode::Robust => "robust",
            ExperimentMode::Resilient => "resilient",
        })
    }
}

impl FromStr for ExperimentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "robust" => Ok(ExperimentMode::Robust),
            "resilient" => Ok(ExperimentMode::Resilient),
            other => Err(Error::invalid(format!(
                "unknown mode {other:?}, expected robust or resilient"
            ))),
        }
    }
}

/// One multiplier/slack entry of a solve, tagged by constraint and scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlackRow {
    pub constraint: String,
    pub scenario: usize,
    pub lambda: f64,
    pub slack: f64,
}

/// Common summary of one experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: String,
    pub mode: ExperimentMode,
    pub status: SolveStatus,
    pub decision: Vec<f64>,
    /// Total optimized value (objective plus violation penalty where one
    /// applies); for closed-loop runs, the accumulated stage cost.
    pub objective_value: f64,
    pub penalty: f64,
    pub violation_probability: Option<f64>,
    pub violation_half_width: Option<f64>,
    pub violation_samples: Option<usize>,
    pub slack_table: Vec<SlackRow>,
    pub runtime_ms: f64,
}

/// Result plus a tabular trace suitable for plotting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub result: ExperimentResult,
    pub trace_header: Vec<String>,
    pub trace: Vec<Vec<f64>>,
}

impl ExperimentOutput {
    /// Writes `result.json` and `trace.csv` into the directory, creating it
    /// if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&self.result)
            .map_err(|e| Error::invalid(format!("serializing result: {e}")))?;
        fs::write(dir.join("result.json"), json)?;
        write_csv(&dir.join("trace.csv"), &self.trace_header, &self.trace)
    }
}

/// Plain CSV writer; floats use the shortest round-trip representation.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Flattens a solve's dual and slack tables into rows: every slack-enabled
/// entry is kept, hard rows only where the multiplier is active.
pub(crate) fn slack_table(spec: &ProblemSpec, labels: &[String], report: &SolveReport) -> Vec<SlackRow> {
    let mut rows = Vec::new();
    for (i, c) in spec.constraints.iter().enumerate() {
        let slacked = c.slack_allowed();
        for j in 0..spec.num_scenarios() {
            if !c.active_at(j) {
                continue;
            }
            let lambda = report.duals.get(i, j);
            let slack = report.slacks.get(i, j);
            if slacked || lambda.abs() > 1e-7 {
                rows.push(SlackRow {
                    constraint: labels[i].clone(),
                    scenario: j,
                    lambda,
                    slack,
                });
            }
        }
    }
    rows
}

/// Runs the closure and returns its output with the elapsed milliseconds.
pub(crate) fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() * 1e3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_strings_round_trip() {
        for m in [ExperimentMode::Robust, ExperimentMode::Resilient] {
            assert_eq!(m.to_string().parse::<ExperimentMode>().unwrap(), m);
        }
        assert!("worst".parse::<ExperimentMode>().is_err());
    }

    #[test]
    fn csv_rows_keep_full_precision() {
        let dir = std::env::temp_dir().join("resilia-csv-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        write_csv(
            &path,
            &["a".into(), "b".into()],
            &[vec![1.0, 0.1234567890123456], vec![2.0, -3.5]],
        )
        .unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("a,b\n"));
        assert!(text.contains("0.1234567890123456"));
        fs::remove_dir_all(&dir).ok();
    }
}
