//! Files written by `run`: report.json, rounds.csv, clusters.json.

use std::fs;
use std::path::Path;

use fedsim_core::cluster::{ClusterAssignment, Dendrogram};
use fedsim_core::orchestrator::ExperimentReport;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersFile {
    pub assignment: ClusterAssignment,
    pub dendrogram: Dendrogram,
}

pub fn write_all(dir: &Path, report: &ExperimentReport) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("report.json"), report)?;
    write_rounds_csv(&dir.join("rounds.csv"), report)?;
    if let (Some(assignment), Some(dendrogram)) = (&report.cluster_assignment, &report.dendrogram) {
        let clusters = ClustersFile {
            assignment: assignment.clone(),
            dendrogram: dendrogram.clone(),
        };
        write_json(&dir.join("clusters.json"), &clusters)?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_rounds_csv(path: &Path, report: &ExperimentReport) -> CliResult<()> {
    let runtime = |e: csv::Error| CliError::Runtime(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(runtime)?;
    w.write_record(["round", "mean_acc", "std_acc", "cumulative_steps"])
        .map_err(runtime)?;
    for r in &report.rounds {
        w.write_record([
            r.round_index.to_string(),
            r.mean_accuracy.to_string(),
            r.std_accuracy.to_string(),
            r.cumulative_steps.to_string(),
        ])
        .map_err(runtime)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a report written by `run`. Anything that does not deserialize as
/// a report is a config error (exit 2).
pub fn read_report(path: &Path) -> CliResult<ExperimentReport> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{} is not a fedsim report: {e}", path.display())))
}

/// Table 1 style: accuracy in percent, `mean ± std`.
pub fn mean_std(report: &ExperimentReport) -> String {
    format!("{:.1} ± {:.2}", 100.0 * report.final_mean, 100.0 * report.final_std)
}
