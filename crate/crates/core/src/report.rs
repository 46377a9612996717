//! Evaluation metrics, aggregate tables and plot-ready CSV bundles.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::policy::RunLogRow;
use crate::qoe::{qoe_lin, LinWeights, QoeScorer};
use crate::sim::{buffer_timeline, session_from_steps, SimConfig, StepOutcome};

pub const TABLE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("session {0} has no steps")]
    EmptySession(String),
}

fn table_tag(kind: &str) -> String {
    format!("# rankabr:{kind} v{TABLE_VERSION}")
}

/// Writes `rows` as CSV under a `# rankabr:<kind> v1` line.
pub fn write_table<T: Serialize>(path: &Path, kind: &str, rows: &[T]) -> Result<(), ReportError> {
    let io = |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = File::create(path).map_err(io)?;
    writeln!(file, "{}", table_tag(kind)).map_err(io)?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row).map_err(|source| ReportError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    }
    w.flush().map_err(io)
}

/// Opens a table for appending rows one at a time; the header is written
/// only when the file is new.
pub fn append_table(path: &Path, kind: &str) -> Result<csv::Writer<File>, ReportError> {
    let io = |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    };
    let fresh = !path.exists() || std::fs::metadata(path).map_err(io)?.len() == 0;
    if !fresh {
        check_tag(path, kind)?;
    }
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io)?;
    if fresh {
        writeln!(file, "{}", table_tag(kind)).map_err(io)?;
    }
    Ok(csv::WriterBuilder::new().has_headers(fresh).from_writer(file))
}

fn check_tag(path: &Path, kind: &str) -> Result<(), ReportError> {
    let file = File::open(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let expected = table_tag(kind);
    if first.trim_end() != expected {
        return Err(ReportError::Schema {
            path: path.to_path_buf(),
            message: format!("expected first line {expected:?}, found {:?}", first.trim_end()),
        });
    }
    Ok(())
}

/// Reads a table written by [`write_table`], checking kind and version.
pub fn read_table<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Vec<T>, ReportError> {
    check_tag(path, kind)?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|source| ReportError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|source| ReportError::Schema {
            path: path.to_path_buf(),
            message: source.to_string(),
        })
}

/// Metrics of one played session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub abr: String,
    pub trace_id: String,
    pub mean_vmaf: f64,
    /// Stalled time over wall-clock time, percent.
    pub stall_ratio: f64,
    pub mean_abs_vmaf_change: f64,
    /// Time-averaged buffer level, seconds.
    pub mean_buffer: f64,
    pub qoe_lin: f64,
    pub qoe_dnn: f64,
}

impl SessionMetrics {
    pub fn from_steps(
        abr: &str,
        trace_id: &str,
        steps: &[StepOutcome],
        chunk_duration: f64,
        sim: &SimConfig,
        weights: &LinWeights,
        scorer: &QoeScorer,
    ) -> Result<Self, ReportError> {
        if steps.is_empty() {
            return Err(ReportError::EmptySession(format!("{abr}/{trace_id}")));
        }
        let n = steps.len() as f64;
        let session = session_from_steps(trace_id, steps);
        let wall: f64 = steps.iter().map(|s| s.download_time + s.sleep_time).sum();
        let stalled: f64 = steps.iter().map(|s| s.rebuffer).sum();
        let timeline = buffer_timeline(steps, chunk_duration, sim.drain_granularity);
        let mean_buffer = timeline.iter().map(|p| p.1).sum::<f64>() / timeline.len().max(1) as f64;
        Ok(Self {
            abr: abr.to_string(),
            trace_id: trace_id.to_string(),
            mean_vmaf: steps.iter().map(|s| s.chunk_vmaf).sum::<f64>() / n,
            stall_ratio: if wall > 0.0 { (100.0 * stalled / wall).clamp(0.0, 100.0) } else { 0.0 },
            mean_abs_vmaf_change: steps.iter().map(|s| s.vmaf_change.abs()).sum::<f64>() / n,
            mean_buffer,
            qoe_lin: qoe_lin(&session, weights),
            qoe_dnn: scorer.mean_window_score(&session),
        })
    }

    fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::MeanVmaf => self.mean_vmaf,
            Metric::StallRatio => self.stall_ratio,
            Metric::MeanAbsVmafChange => self.mean_abs_vmaf_change,
            Metric::MeanBuffer => self.mean_buffer,
            Metric::QoeLin => self.qoe_lin,
            Metric::QoeDnn => self.qoe_dnn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MeanVmaf,
    StallRatio,
    MeanAbsVmafChange,
    MeanBuffer,
    QoeLin,
    QoeDnn,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::MeanVmaf,
        Metric::StallRatio,
        Metric::MeanAbsVmafChange,
        Metric::MeanBuffer,
        Metric::QoeLin,
        Metric::QoeDnn,
    ];
}

/// Mean and the half-width of a normal-approximation 95% interval.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub abr: String,
    pub metric: Metric,
    pub sessions: usize,
    pub mean: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub abr: String,
    pub metric: Metric,
    pub value: f64,
    pub cumulative: f64,
}

/// ABR names in order of first appearance.
fn abr_order(rows: &[SessionMetrics]) -> Vec<&str> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.abr.as_str()) {
            names.push(&r.abr);
        }
    }
    names
}

pub fn aggregate(rows: &[SessionMetrics]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for abr in abr_order(rows) {
        let mine: Vec<&SessionMetrics> = rows.iter().filter(|r| r.abr == abr).collect();
        for m in Metric::ALL {
            let values: Vec<f64> = mine.iter().map(|r| r.metric(m)).collect();
            let (mean, half) = mean_ci95(&values);
            out.push(AggregateRow {
                abr: abr.to_string(),
                metric: m,
                sessions: values.len(),
                mean,
                ci95_low: mean - half,
                ci95_high: mean + half,
            });
        }
    }
    out
}

/// Empirical CDFs of both QoE scores per ABR, values ascending.
pub fn qoe_cdf(rows: &[SessionMetrics]) -> Vec<CdfRow> {
    let mut out = Vec::new();
    for abr in abr_order(rows) {
        for m in [Metric::QoeLin, Metric::QoeDnn] {
            let mut values: Vec<f64> = rows.iter().filter(|r| r.abr == abr).map(|r| r.metric(m)).collect();
            values.sort_by(f64::total_cmp);
            let n = values.len() as f64;
            out.extend(values.into_iter().enumerate().map(|(i, value)| CdfRow {
                abr: abr.to_string(),
                metric: m,
                value,
                cumulative: (i + 1) as f64 / n,
            }));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub sessions: Vec<SessionMetrics>,
    pub aggregates: Vec<AggregateRow>,
    pub cdf: Vec<CdfRow>,
}

impl EvalReport {
    pub fn new(sessions: Vec<SessionMetrics>) -> Self {
        Self {
            aggregates: aggregate(&sessions),
            cdf: qoe_cdf(&sessions),
            sessions,
        }
    }

    /// Writes `sessions.csv`, `aggregate.csv` and `cdf.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), ReportError> {
        write_table(&dir.join("sessions.csv"), "sessions", &self.sessions)?;
        write_table(&dir.join("aggregate.csv"), "aggregate", &self.aggregates)?;
        write_table(&dir.join("cdf.csv"), "cdf", &self.cdf)
    }

    pub fn read(dir: &Path) -> Result<Self, ReportError> {
        Ok(Self::new(read_table(&dir.join("sessions.csv"), "sessions")?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaRow {
    pub run: String,
    pub epoch: usize,
    pub omega: f64,
    pub mean_entropy: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRow {
    pub run: String,
    pub epoch: usize,
    pub mean_reward: f64,
    pub eval_qoe_lin: Option<f64>,
    pub eval_qoe_dnn: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub run: String,
    pub trace_id: String,
    pub count: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub abr: String,
    pub trace_id: String,
    pub mean_vmaf: f64,
    pub stall_ratio: f64,
}

pub fn omega_curve(run: &str, log: &[RunLogRow]) -> Vec<OmegaRow> {
    log.iter()
        .map(|r| OmegaRow {
            run: run.to_string(),
            epoch: r.epoch,
            omega: r.omega,
            mean_entropy: r.mean_entropy,
            lambda: r.lambda,
        })
        .collect()
}

pub fn learning_curve(run: &str, log: &[RunLogRow]) -> Vec<LearningRow> {
    log.iter()
        .map(|r| LearningRow {
            run: run.to_string(),
            epoch: r.epoch,
            mean_reward: r.mean_reward,
            eval_qoe_lin: r.eval_qoe_lin,
            eval_qoe_dnn: r.eval_qoe_dnn,
        })
        .collect()
}

/// How often each trace was trained on, sorted by trace id.
pub fn selection_pdf(run: &str, log: &[RunLogRow]) -> Vec<SelectionRow> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in log {
        *counts.entry(&r.trace_id).or_default() += 1;
    }
    let total = log.len() as f64;
    counts
        .into_iter()
        .map(|(id, count)| SelectionRow {
            run: run.to_string(),
            trace_id: id.to_string(),
            count,
            frequency: count as f64 / total,
        })
        .collect()
}

/// Quality against stall ratio for every session of every report.
pub fn scatter(reports: &[EvalReport]) -> Vec<ScatterRow> {
    let mut rows: Vec<ScatterRow> = reports
        .iter()
        .flat_map(|r| r.sessions.iter())
        .map(|s| ScatterRow {
            abr: s.abr.clone(),
            trace_id: s.trace_id.clone(),
            mean_vmaf: s.mean_vmaf,
            stall_ratio: s.stall_ratio,
        })
        .collect();
    rows.sort_by(|a, b| a.abr.cmp(&b.abr).then_with(|| a.trace_id.cmp(&b.trace_id)));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(abr: &str, trace: &str, q: f64) -> SessionMetrics {
        SessionMetrics {
            abr: abr.into(),
            trace_id: trace.into(),
            mean_vmaf: q,
            stall_ratio: 0.0,
            mean_abs_vmaf_change: 0.0,
            mean_buffer: 10.0,
            qoe_lin: q,
            qoe_dnn: -q,
        }
    }

    #[test]
    fn ci_of_known_sample() {
        let (m, h) = mean_ci95(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // s² = 5/3, se = sqrt(5/12)
        assert!((h - 1.96 * (5.0f64 / 12.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_ci95(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn counts_and_cdf_order() {
        let rows: Vec<SessionMetrics> = ["rate", "bba", "mpc"]
            .iter()
            .flat_map(|a| (0..10).map(move |t| row(a, &format!("t{t}"), (t * 7 % 10) as f64)))
            .collect();
        let rep = EvalReport::new(rows);
        assert_eq!(rep.sessions.len(), 30);
        let qoe_rows: Vec<_> = rep.aggregates.iter().filter(|a| a.metric == Metric::QoeLin).collect();
        assert_eq!(qoe_rows.len(), 3);
        assert_eq!(qoe_rows[0].abr, "rate");
        for abr in ["rate", "bba", "mpc"] {
            for m in [Metric::QoeLin, Metric::QoeDnn] {
                let c: Vec<&CdfRow> = rep.cdf.iter().filter(|c| c.abr == abr && c.metric == m).collect();
                assert_eq!(c.len(), 10);
                assert!(c.windows(2).all(|w| w[0].value <= w[1].value));
                assert_eq!(c.last().unwrap().cumulative, 1.0);
            }
        }
    }

    #[test]
    fn selection_frequencies_sum_to_one() {
        let log: Vec<RunLogRow> = ["a", "b", "a", "c", "a"]
            .iter()
            .enumerate()
            .map(|(i, t)| RunLogRow {
                epoch: i + 1,
                trace_id: t.to_string(),
                mean_entropy: 1.0,
                omega: 0.5,
                lambda: 0.1,
                mean_reward: 0.0,
                eval_qoe_lin: None,
                eval_qoe_dnn: None,
                selector_value: None,
                selector_mean: None,
                selector_bonus: None,
            })
            .collect();
        let pdf = selection_pdf("r", &log);
        assert_eq!(pdf[0].count, 3);
        assert!((pdf.iter().map(|r| r.frequency).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(omega_curve("r", &log).len(), 5);
    }

    #[test]
    fn table_round_trip_and_tag_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let rows = vec![row("rate", "t0", 1.5), row("bba", "t1", 2.0)];
        write_table(&p, "sessions", &rows).unwrap();
        let back: Vec<SessionMetrics> = read_table(&p, "sessions").unwrap();
        assert_eq!(back, rows);
        assert!(matches!(
            read_table::<SessionMetrics>(&p, "aggregate"),
            Err(ReportError::Schema { .. })
        ));
    }

    #[test]
    fn append_keeps_single_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        for i in 0..2 {
            let mut w = append_table(&p, "sessions").unwrap();
            w.serialize(row("rate", &format!("t{i}"), 1.0)).unwrap();
            w.flush().unwrap();
        }
        let back: Vec<SessionMetrics> = read_table(&p, "sessions").unwrap();
        assert_eq!(back.len(), 2);
    }
}
