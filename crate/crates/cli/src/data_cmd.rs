//! `ingest` and `synth`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rankabr::data::{
    load_manifest, load_ratings, load_trace_dir, save_manifest, save_ratings, save_trace, NetworkTrace,
};
use rankabr::synth::{cliff_pool, default_manifest, rater_panel, trace_pool, RaterPanelConfig};
use serde::{Deserialize, Serialize};

use crate::settings::{ensure_dir, output_path, record, ConfigFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestKind {
    Traces,
    Manifest,
    Ratings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    /// Two columns: seconds and Mbps.
    Cooked,
    /// One delivery-opportunity timestamp (ms) per line.
    Mahimahi,
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    #[arg(long, value_enum)]
    pub kind: IngestKind,
    /// Source file or directory.
    #[arg(long)]
    pub input: PathBuf,
    /// Destination file (manifest) or directory (traces, ratings).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "cooked")]
    pub trace_format: TraceFormat,
    /// Mahimahi bin width, milliseconds.
    #[arg(long, default_value_t = 500)]
    pub bin_ms: u64,
    /// Floor for empty Mahimahi bins, Mbps.
    #[arg(long, default_value_t = 0.05)]
    pub min_mbps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSettings {
    pub kind: IngestKind,
    pub input: PathBuf,
    pub out: PathBuf,
    pub trace_format: TraceFormat,
    pub bin_ms: u64,
    pub min_mbps: f64,
}

impl IngestArgs {
    pub fn settings(&self) -> IngestSettings {
        IngestSettings {
            kind: self.kind,
            input: self.input.clone(),
            out: self.out.clone(),
            trace_format: self.trace_format,
            bin_ms: self.bin_ms,
            min_mbps: self.min_mbps,
        }
    }
}

fn mahimahi_dir(dir: &Path, bin_ms: u64, min_mbps: f64) -> Result<Vec<NetworkTrace>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no trace files in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            NetworkTrace::from_mahimahi(id, &text, bin_ms, min_mbps)
                .with_context(|| format!("converting {}", p.display()))
        })
        .collect()
}

/// Validates external data and writes it in the canonical layout.
/// Returns a one-line summary.
pub fn ingest(s: &IngestSettings) -> Result<String> {
    let out = output_path(&s.out);
    match s.kind {
        IngestKind::Traces => {
            let traces = match s.trace_format {
                TraceFormat::Cooked => load_trace_dir(&s.input)?,
                TraceFormat::Mahimahi => mahimahi_dir(&s.input, s.bin_ms, s.min_mbps)?,
            };
            ensure_dir(&out)?;
            for t in &traces {
                save_trace(t, out.join(format!("{}.txt", t.id())))?;
            }
            let mean = traces.iter().map(NetworkTrace::mean_mbps).sum::<f64>() / traces.len() as f64;
            Ok(format!("{} traces, mean {:.3} Mbps", traces.len(), mean))
        }
        IngestKind::Manifest => {
            let m = load_manifest(&s.input)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                ensure_dir(parent)?;
            }
            save_manifest(&m, &out)?;
            Ok(format!(
                "{} chunks of {} s, {} levels",
                m.num_chunks(),
                m.chunk_duration(),
                m.num_levels()
            ))
        }
        IngestKind::Ratings => {
            let d = load_ratings(&s.input)?;
            ensure_dir(&out)?;
            save_ratings(&d, &out)?;
            let c = d.counts();
            Ok(format!(
                "{} queries, {} sessions, {} users, {} scores, {} enumerable pairs",
                c.queries,
                c.sessions,
                c.users,
                c.scores,
                d.enumerable_pairs()
            ))
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub train_traces: usize,
    #[arg(long, default_value_t = 20)]
    pub validation_traces: usize,
    /// Traces whose bandwidth collapses early.
    #[arg(long, default_value_t = 0)]
    pub cliff_traces: usize,
    /// Trace length, seconds.
    #[arg(long, default_value_t = 300)]
    pub duration: usize,
    #[arg(long, default_value_t = 60)]
    pub queries: usize,
    #[arg(long, default_value_t = 24)]
    pub sessions_per_query: usize,
    #[arg(long, default_value_t = 32)]
    pub users: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSettings {
    pub out: PathBuf,
    pub seed: u64,
    pub train_traces: usize,
    pub validation_traces: usize,
    pub cliff_traces: usize,
    pub duration: usize,
    pub panel: RaterPanelConfig,
}

impl SynthArgs {
    pub fn settings(&self) -> SynthSettings {
        SynthSettings {
            out: self.out.clone(),
            seed: self.seed,
            train_traces: self.train_traces,
            validation_traces: self.validation_traces,
            cliff_traces: self.cliff_traces,
            duration: self.duration,
            panel: RaterPanelConfig {
                queries: self.queries,
                sessions_per_query: self.sessions_per_query,
                users: self.users,
                seed: self.seed,
                ..RaterPanelConfig::default()
            },
        }
    }
}

fn write_traces(dir: &Path, traces: &[NetworkTrace]) -> Result<()> {
    ensure_dir(dir)?;
    for t in traces {
        save_trace(t, dir.join(format!("{}.txt", t.id())))?;
    }
    Ok(())
}

/// Writes synthetic traces, a manifest and a rater panel under `out`.
pub fn synth(s: &SynthSettings) -> Result<PathBuf> {
    let out = output_path(&s.out);
    ensure_dir(&out)?;
    record(&out, s)?;
    let seed = s.seed;
    write_traces(&out.join("traces/train"), &trace_pool("train", s.train_traces, s.duration, seed))?;
    if s.validation_traces > 0 {
        write_traces(
            &out.join("traces/validation"),
            &trace_pool("val", s.validation_traces, s.duration, seed.wrapping_add(1)),
        )?;
    }
    if s.cliff_traces > 0 {
        write_traces(
            &out.join("traces/cliff"),
            &cliff_pool("cliff", s.cliff_traces, s.duration, seed.wrapping_add(2)),
        )?;
    }
    save_manifest(&default_manifest(seed), out.join("manifest.json"))?;
    let panel = rater_panel(&s.panel)?;
    let ratings = out.join("ratings");
    ensure_dir(&ratings)?;
    save_ratings(&panel.dataset, &ratings)?;
    Ok(out)
}

pub fn run_ingest(args: &IngestArgs, cfg: &ConfigFile) -> Result<()> {
    let s = cfg.apply("ingest", args.settings())?;
    println!("{}", ingest(&s)?);
    Ok(())
}

pub fn run_synth(args: &SynthArgs, cfg: &ConfigFile) -> Result<()> {
    let s = cfg.apply("synth", args.settings())?;
    println!("wrote {}", synth(&s)?.display());
    Ok(())
}
