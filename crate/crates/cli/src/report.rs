use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Stage, StageContext};
use crate::pipeline::TrainingSummary;

/// One cell of a results table with the artifact it summarizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub init: String,
    pub mean_rmse_mps: f64,
    /// Mean normalized forward MSE of the final estimates.
    pub mean_final_misfit: f64,
    pub cutoff_rate: f64,
    pub mean_iterations: f64,
    pub n_samples: usize,
    /// Path of the backing `results.csv`, relative to the run directory.
    pub results: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub name: String,
    pub objective: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub n_test: usize,
    pub table1: Vec<TableRow>,
    pub table2: Vec<TableRow>,
    pub training: TrainingSummary,
    pub wall_time_s: BTreeMap<String, f64>,
    pub threads: usize,
    pub version: String,
    #[serde(skip)]
    pub traces: Vec<Trace>,
}

impl RunReport {
    pub fn rmse(&self, method: &str, init: &str) -> Option<f64> {
        self.table1
            .iter()
            .chain(&self.table2)
            .find(|r| r.method == method && r.init == init)
            .map(|r| r.mean_rmse_mps)
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(dir.join("report.json")).stage(Stage::Report)?;
        serde_json::from_str(&text).stage(Stage::Report)
    }
}

fn write_table(path: &Path, rows: &[TableRow]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .stage(Stage::Report)?;
    w.write_record([
        "method",
        "init",
        "mean_rmse_mps",
        "mean_final_misfit",
        "cutoff_rate",
        "mean_iterations",
        "n_samples",
        "results",
    ])
    .stage(Stage::Report)?;
    for r in rows {
        w.serialize(r).stage(Stage::Report)?;
    }
    w.flush().stage(Stage::Report)
}

/// `report.json`, `table1.csv`, `table2.csv` and one `trace_<name>.csv`
/// per iterative run.
pub fn emit_report(report: &RunReport, out_dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out_dir).stage(Stage::Report)?;
    let json = serde_json::to_string_pretty(report).stage(Stage::Report)?;
    fs::write(out_dir.join("report.json"), json).stage(Stage::Report)?;
    write_table(&out_dir.join("table1.csv"), &report.table1)?;
    write_table(&out_dir.join("table2.csv"), &report.table2)?;
    for t in &report.traces {
        let mut w = csv::Writer::from_path(out_dir.join(format!("trace_{}.csv", t.name)))
            .stage(Stage::Report)?;
        w.write_record(["iteration", "objective"])
            .stage(Stage::Report)?;
        for (i, v) in t.objective.iter().enumerate() {
            w.write_record([i.to_string(), format!("{v:e}")])
                .stage(Stage::Report)?;
        }
        w.flush().stage(Stage::Report)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows_in(path: &Path) -> (Vec<String>, usize) {
        let mut r = csv::Reader::from_path(path).unwrap();
        let header = r.headers().unwrap().iter().map(String::from).collect();
        (header, r.records().count())
    }

    #[test]
    fn empty_report_writes_header_only_tables() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&RunReport::default(), dir.path()).unwrap();
        let (header, n) = rows_in(&dir.path().join("table1.csv"));
        assert_eq!(header[0], "method");
        assert_eq!(n, 0);
        assert_eq!(RunReport::load(dir.path()).unwrap(), RunReport::default());
    }

    #[test]
    fn single_method_single_row() {
        let dir = tempfile::tempdir().unwrap();
        let report = RunReport {
            table1: vec![TableRow {
                method: "LFM".into(),
                init: "avg".into(),
                mean_rmse_mps: 1.5,
                mean_final_misfit: 0.01,
                cutoff_rate: 0.5,
                mean_iterations: 10.0,
                n_samples: 2,
                results: "runs/lfm_avg/results.csv".into(),
            }],
            traces: vec![Trace {
                name: "lfm_avg".into(),
                objective: vec![2.0, 1.0],
            }],
            ..RunReport::default()
        };
        emit_report(&report, dir.path()).unwrap();
        assert_eq!(rows_in(&dir.path().join("table1.csv")).1, 1);
        assert_eq!(rows_in(&dir.path().join("trace_lfm_avg.csv")).1, 2);
        let back = RunReport::load(dir.path()).unwrap();
        assert_eq!(back.rmse("LFM", "avg"), Some(1.5));
    }
}
