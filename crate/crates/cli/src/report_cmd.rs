//! `report`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;
use rankabr::policy::RunLogRow;
use rankabr::report::{
    learning_curve, omega_curve, read_table, scatter, selection_pdf, write_table, EvalReport,
};
use serde::{Deserialize, Serialize};

use crate::settings::{ensure_dir, output_path, record, ConfigFile};
use crate::train_cmd::RUN_LOG_KIND;

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Training run log; repeat to compare runs. Labelled by its directory name.
    #[arg(long = "run-log")]
    pub run_logs: Vec<PathBuf>,
    /// Output directory of `eval-abr`; repeat to merge.
    #[arg(long = "eval")]
    pub evals: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSettings {
    pub run_logs: Vec<PathBuf>,
    pub evals: Vec<PathBuf>,
    pub out: PathBuf,
}

impl ReportArgs {
    pub fn settings(&self) -> ReportSettings {
        ReportSettings {
            run_logs: self.run_logs.clone(),
            evals: self.evals.clone(),
            out: self.out.clone(),
        }
    }
}

fn run_label(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

/// Writes the plot-ready tables and returns their file names.
pub fn report(s: &ReportSettings) -> Result<Vec<String>> {
    if s.run_logs.is_empty() && s.evals.is_empty() {
        bail!("nothing to report: give --run-log and/or --eval");
    }
    let out = output_path(&s.out);
    ensure_dir(&out)?;
    record(&out, s)?;
    let mut written = Vec::new();
    if !s.run_logs.is_empty() {
        let (mut omega, mut learning, mut selection) = (Vec::new(), Vec::new(), Vec::new());
        for path in &s.run_logs {
            let label = run_label(path);
            let log: Vec<RunLogRow> = read_table(path, RUN_LOG_KIND)?;
            omega.extend(omega_curve(&label, &log));
            learning.extend(learning_curve(&label, &log));
            selection.extend(selection_pdf(&label, &log));
        }
        write_table(&out.join("omega.csv"), "omega", &omega)?;
        write_table(&out.join("learning.csv"), "learning", &learning)?;
        write_table(&out.join("selection.csv"), "selection", &selection)?;
        written.extend(["omega.csv", "learning.csv", "selection.csv"].map(String::from));
    }
    if !s.evals.is_empty() {
        let reports = s
            .evals
            .iter()
            .map(|d| EvalReport::read(d).map_err(anyhow::Error::from))
            .collect::<Result<Vec<_>>>()?;
        let merged = EvalReport::new(reports.iter().flat_map(|r| r.sessions.clone()).collect());
        write_table(&out.join("scatter.csv"), "scatter", &scatter(&reports))?;
        write_table(&out.join("cdf.csv"), "cdf", &merged.cdf)?;
        write_table(&out.join("aggregate.csv"), "aggregate", &merged.aggregates)?;
        written.extend(["scatter.csv", "cdf.csv", "aggregate.csv"].map(String::from));
    }
    Ok(written)
}

pub fn run(args: &ReportArgs, cfg: &ConfigFile) -> Result<()> {
    let s = cfg.apply("report", args.settings())?;
    for f in report(&s)? {
        println!("{}", output_path(&s.out).join(f).display());
    }
    Ok(())
}
