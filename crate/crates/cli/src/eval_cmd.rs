//! `eval-abr`.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rankabr::baselines::{Bba, BbaConfig, MpcConfig, RateBased, RobustMpc};
use rankabr::data::{load_manifest, load_trace_dir, NetworkTrace, VideoManifest};
use rankabr::nn::Mlp;
use rankabr::policy::{GreedyPolicy, ObservationLayout, TrainerState};
use rankabr::qoe::{LinWeights, QoeScorer};
use rankabr::report::{write_table, EvalReport, SessionMetrics};
use rankabr::sim::{rollout, BitrateSelector, SimConfig, StepOutcome};
use serde::{Deserialize, Serialize};

use crate::qoe_cmd::QoeBundle;
use crate::settings::{ensure_dir, output_path, record, ConfigFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AbrName {
    Rate,
    Bba,
    Mpc,
    /// The trained policy given by `--policy`.
    Jade,
}

impl AbrName {
    pub fn as_str(self) -> &'static str {
        match self {
            AbrName::Rate => "rate",
            AbrName::Bba => "bba",
            AbrName::Mpc => "mpc",
            AbrName::Jade => "jade",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MpcObjectiveName {
    Lin,
    Dnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSettings {
    pub horizon: usize,
    pub throughput_window: usize,
    pub error_window: usize,
    /// Planning weights; `None` uses the QoE bundle's linear weights.
    pub weights: Option<LinWeights>,
    pub objective: MpcObjectiveName,
}

impl Default for MpcSettings {
    fn default() -> Self {
        let d = MpcConfig::default();
        Self {
            horizon: d.horizon,
            throughput_window: d.throughput_window,
            error_window: d.error_window,
            weights: None,
            objective: MpcObjectiveName::Lin,
        }
    }
}

/// Session logs produced elsewhere, one JSON-lines file per trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalLogs {
    pub name: String,
    pub dir: PathBuf,
}

fn parse_external(s: &str) -> Result<ExternalLogs, String> {
    let (name, dir) = s.split_once('=').ok_or("expected NAME=DIR")?;
    if name.is_empty() {
        return Err("empty name".into());
    }
    Ok(ExternalLogs {
        name: name.into(),
        dir: dir.into(),
    })
}

#[derive(Debug, Clone, Args)]
pub struct EvalAbrArgs {
    /// Comma-separated ABRs to play.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "rate,bba,mpc")]
    pub abr: Vec<AbrName>,
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory of `train-qoe`.
    #[arg(long)]
    pub qoe: PathBuf,
    /// Checkpoint directory of a `train-abr` run, required for `jade`.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Externally produced session logs to score alongside, as NAME=DIR.
    #[arg(long, value_parser = parse_external)]
    pub external: Vec<ExternalLogs>,
    #[arg(long, value_enum, default_value = "lin")]
    pub mpc_objective: MpcObjectiveName,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalAbrSettings {
    pub abr: Vec<AbrName>,
    pub traces: PathBuf,
    pub manifest: PathBuf,
    pub qoe: PathBuf,
    pub policy: Option<PathBuf>,
    pub external: Vec<ExternalLogs>,
    pub out: PathBuf,
    pub threads: usize,
    pub sim: SimConfig,
    pub bba: BbaConfig,
    pub mpc: MpcSettings,
}

impl EvalAbrArgs {
    pub fn settings(&self) -> EvalAbrSettings {
        EvalAbrSettings {
            abr: self.abr.clone(),
            traces: self.traces.clone(),
            manifest: self.manifest.clone(),
            qoe: self.qoe.clone(),
            policy: self.policy.clone(),
            external: self.external.clone(),
            out: self.out.clone(),
            threads: self.threads,
            sim: SimConfig::default(),
            bba: BbaConfig::default(),
            mpc: MpcSettings {
                objective: self.mpc_objective,
                ..MpcSettings::default()
            },
        }
    }
}

/// One ready-to-play ABR; every pair gets a fresh selector from it.
enum Player<'a> {
    Rate,
    Bba(BbaConfig),
    Mpc(MpcConfig, Option<&'a QoeScorer>),
    Jade(&'a Mlp, ObservationLayout),
}

impl Player<'_> {
    fn selector(&self) -> Box<dyn BitrateSelector + '_> {
        match self {
            Player::Rate => Box::new(RateBased),
            Player::Bba(cfg) => Box::new(Bba { cfg: *cfg }),
            Player::Mpc(cfg, None) => Box::new(RobustMpc::new(*cfg)),
            Player::Mpc(cfg, Some(scorer)) => Box::new(RobustMpc::with_scorer(*cfg, (*scorer).clone())),
            Player::Jade(actor, layout) => Box::new(GreedyPolicy {
                actor,
                layout: *layout,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub abr: String,
    pub trace_id: String,
    pub error: String,
}

type PairResult = Result<(SessionMetrics, Vec<StepOutcome>), String>;

struct PlayContext<'a> {
    manifest: &'a VideoManifest,
    sim: SimConfig,
    weights: LinWeights,
    scorer: &'a QoeScorer,
}

fn play(ctx: &PlayContext<'_>, name: &str, player: &Player<'_>, trace: &NetworkTrace) -> PairResult {
    let mut sel = player.selector();
    let r = rollout(sel.as_mut(), ctx.manifest, trace, ctx.sim, 0.0, trace.id()).map_err(|e| e.to_string())?;
    let m = SessionMetrics::from_steps(
        name,
        trace.id(),
        &r.steps,
        ctx.manifest.chunk_duration(),
        &ctx.sim,
        &ctx.weights,
        ctx.scorer,
    )
    .map_err(|e| e.to_string())?;
    Ok((m, r.steps))
}

fn read_jsonl(path: &Path) -> Result<Vec<StepOutcome>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut steps = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        steps.push(
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?,
        );
    }
    Ok(steps)
}

fn write_jsonl(path: &Path, steps: &[StepOutcome]) -> Result<()> {
    let mut text = String::new();
    for s in steps {
        text.push_str(&serde_json::to_string(s)?);
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Plays every (ABR, trace) pair and writes the report. Pairs that fail are
/// listed in `failures.csv` and turn the result into an error after the
/// partial report is written.
pub fn eval(s: &EvalAbrSettings) -> Result<EvalReport> {
    if s.abr.is_empty() && s.external.is_empty() {
        bail!("nothing to evaluate: no ABR and no external logs");
    }
    let out = output_path(&s.out);
    ensure_dir(&out)?;
    record(&out, s)?;
    let traces = load_trace_dir(&s.traces).with_context(|| format!("loading traces from {}", s.traces.display()))?;
    let manifest = load_manifest(&s.manifest).with_context(|| format!("loading {}", s.manifest.display()))?;
    let bundle = QoeBundle::load(&s.qoe)?;
    let mpc_cfg = MpcConfig {
        horizon: s.mpc.horizon,
        throughput_window: s.mpc.throughput_window,
        error_window: s.mpc.error_window,
        weights: s.mpc.weights.unwrap_or(bundle.weights),
    };
    let policy = match (s.abr.contains(&AbrName::Jade), &s.policy) {
        (true, Some(dir)) => Some(TrainerState::load(dir).with_context(|| format!("loading policy {}", dir.display()))?),
        (true, None) => bail!("`jade` needs --policy"),
        _ => None,
    };
    if let Some(p) = &policy {
        if p.layout.levels != manifest.num_levels() {
            bail!(
                "policy was trained for {} levels, manifest has {}",
                p.layout.levels,
                manifest.num_levels()
            );
        }
    }
    let players: Vec<(&str, Player<'_>)> = s
        .abr
        .iter()
        .map(|a| {
            let p = match a {
                AbrName::Rate => Player::Rate,
                AbrName::Bba => Player::Bba(s.bba),
                AbrName::Mpc => Player::Mpc(
                    mpc_cfg,
                    (s.mpc.objective == MpcObjectiveName::Dnn).then_some(&bundle.scorer),
                ),
                AbrName::Jade => {
                    let st = policy.as_ref().expect("loaded above");
                    Player::Jade(&st.actor, st.layout)
                }
            };
            (a.as_str(), p)
        })
        .collect();
    let ctx = PlayContext {
        manifest: &manifest,
        sim: s.sim,
        weights: bundle.weights,
        scorer: &bundle.scorer,
    };

    let pairs: Vec<(usize, usize)> = (0..players.len())
        .flat_map(|a| (0..traces.len()).map(move |t| (a, t)))
        .collect();
    let threads = match s.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(pairs.len().max(1));
    let run_one = |&(a, t): &(usize, usize)| play(&ctx, players[a].0, &players[a].1, &traces[t]);
    let results: Vec<PairResult> = if threads <= 1 {
        pairs.iter().map(run_one).collect()
    } else {
        let mut slots: Vec<Option<PairResult>> = (0..pairs.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|k| {
                    let pairs = &pairs;
                    let run_one = &run_one;
                    scope.spawn(move || {
                        (k..pairs.len())
                            .step_by(threads)
                            .map(|i| (i, run_one(&pairs[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("evaluation worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|r| r.expect("every pair ran")).collect()
    };

    let mut sessions = Vec::new();
    let mut failures = Vec::new();
    for (&(a, t), r) in pairs.iter().zip(results) {
        let name = players[a].0;
        match r {
            Ok((m, steps)) => {
                let dir = ensure_dir(&out.join("logs").join(name))?.to_path_buf();
                write_jsonl(&dir.join(format!("{}.jsonl", traces[t].id())), &steps)?;
                sessions.push(m);
            }
            Err(error) => failures.push(FailureRow {
                abr: name.into(),
                trace_id: traces[t].id().into(),
                error,
            }),
        }
    }
    for ext in &s.external {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&ext.dir)
            .with_context(|| format!("listing {}", ext.dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        for f in files {
            let trace_id = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let scored = read_jsonl(&f).and_then(|steps| {
                Ok(SessionMetrics::from_steps(
                    &ext.name,
                    &trace_id,
                    &steps,
                    manifest.chunk_duration(),
                    &s.sim,
                    &bundle.weights,
                    &bundle.scorer,
                )?)
            });
            match scored {
                Ok(m) => sessions.push(m),
                Err(e) => failures.push(FailureRow {
                    abr: ext.name.clone(),
                    trace_id,
                    error: format!("{e:#}"),
                }),
            }
        }
    }

    let report = EvalReport::new(sessions);
    report.write(&out)?;
    let fail_path = out.join("failures.csv");
    if failures.is_empty() {
        if fail_path.exists() {
            std::fs::remove_file(&fail_path)?;
        }
    } else {
        write_table(&fail_path, "failures", &failures)?;
        bail!(
            "{} of {} sessions failed (first: {}/{}: {}); partial report in {}",
            failures.len(),
            failures.len() + report.sessions.len(),
            failures[0].abr,
            failures[0].trace_id,
            failures[0].error,
            out.display()
        );
    }
    Ok(report)
}

pub fn run(args: &EvalAbrArgs, cfg: &ConfigFile) -> Result<()> {
    let s = cfg.apply("eval-abr", args.settings())?;
    let report = eval(&s)?;
    for a in report
        .aggregates
        .iter()
        .filter(|a| a.metric == rankabr::report::Metric::QoeLin)
    {
        println!(
            "{:<10} QoE_lin {:>9.3}  95% CI [{:.3}, {:.3}]  ({} sessions)",
            a.abr, a.mean, a.ci95_low, a.ci95_high, a.sessions
        );
    }
    Ok(())
}
