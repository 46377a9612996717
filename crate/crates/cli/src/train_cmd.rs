//! `train-abr`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rankabr::data::{load_manifest, load_trace_dir, NetworkTrace, VideoManifest};
use rankabr::policy::{
    train_abr, AbrTrainConfig, OmegaMode, PolicyError, RunLogRow, SelectorMode, TrainInputs,
    TrainerState,
};
use rankabr::report::{append_table, read_table, write_table};
use serde::{Deserialize, Serialize};

use crate::qoe_cmd::QoeBundle;
use crate::settings::{ensure_dir, output_path, record, ConfigFile};

pub const RUN_LOG_FILE: &str = "run_log.csv";
pub const RUN_LOG_KIND: &str = "run-log";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Debug, Clone, Args)]
pub struct TrainAbrArgs {
    /// Directory of training traces.
    #[arg(long)]
    pub traces: PathBuf,
    /// Video manifest; repeat for a pool.
    #[arg(long = "manifest", required = true)]
    pub manifests: Vec<PathBuf>,
    /// Output directory of `train-qoe`.
    #[arg(long)]
    pub qoe: PathBuf,
    /// Held-out traces evaluated every `--validate-every` epochs.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long, default_value = "abr")]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Actor and critic learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Step size of the entropy-weight update.
    #[arg(long)]
    pub lambda_lr: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Pick training traces uniformly instead of with the bandit.
    #[arg(long)]
    pub no_selector: bool,
    /// Hold the reward blend weight constant (1 = linear only, 0 = neural only).
    #[arg(long)]
    pub fixed_omega: Option<f64>,
    #[arg(long)]
    pub validate_every: Option<usize>,
    /// Epochs between checkpoints; one is always written at the end.
    #[arg(long, default_value_t = 100)]
    pub checkpoint_every: usize,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainAbrSettings {
    pub traces: PathBuf,
    pub manifests: Vec<PathBuf>,
    pub qoe: PathBuf,
    pub validation: Option<PathBuf>,
    pub out: PathBuf,
    pub checkpoint_every: usize,
    pub resume: bool,
    pub train: AbrTrainConfig,
}

impl TrainAbrArgs {
    pub fn settings(&self) -> TrainAbrSettings {
        let mut train = AbrTrainConfig {
            seed: self.seed,
            ..AbrTrainConfig::default()
        };
        if let Some(e) = self.epochs {
            train.epochs = e;
        }
        if let Some(a) = self.agents {
            train.ppo.agents = a;
        }
        if let Some(lr) = self.learning_rate {
            train.ppo.learning_rate = lr;
        }
        if let Some(lr) = self.lambda_lr {
            train.ppo.lambda_lr = lr;
        }
        if let Some(h) = &self.hidden {
            train.hidden = h.clone();
        }
        if self.no_selector {
            train.selector = SelectorMode::Uniform;
        }
        if let Some(w) = self.fixed_omega {
            train.omega = OmegaMode::Fixed(w);
        }
        if let Some(v) = self.validate_every {
            train.validate_every = v;
        }
        TrainAbrSettings {
            traces: self.traces.clone(),
            manifests: self.manifests.clone(),
            qoe: self.qoe.clone(),
            validation: self.validation.clone(),
            out: self.out.clone(),
            checkpoint_every: self.checkpoint_every,
            resume: self.resume,
            train,
        }
    }
}

fn load_manifests(paths: &[PathBuf]) -> Result<Vec<VideoManifest>> {
    if paths.is_empty() {
        bail!("at least one manifest is required");
    }
    paths
        .iter()
        .map(|p| load_manifest(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

fn load_traces(dir: &Path) -> Result<Vec<NetworkTrace>> {
    load_trace_dir(dir).with_context(|| format!("loading traces from {}", dir.display()))
}

/// Summary of a finished run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub out: PathBuf,
    pub last_epoch: usize,
    pub last_row: Option<RunLogRow>,
}

pub fn train(s: &TrainAbrSettings) -> Result<TrainSummary> {
    if s.checkpoint_every == 0 {
        bail!("checkpoint_every must be >= 1");
    }
    let out = output_path(&s.out);
    ensure_dir(&out)?;
    let traces = load_traces(&s.traces)?;
    let validation = match &s.validation {
        Some(d) => load_traces(d)?,
        None => Vec::new(),
    };
    let manifests = load_manifests(&s.manifests)?;
    let bundle = QoeBundle::load(&s.qoe)?;
    let inputs = TrainInputs {
        traces: &traces,
        manifests: &manifests,
        weights: bundle.weights,
        scorer: &bundle.scorer,
        validation: &validation,
    };

    let log_path = out.join(RUN_LOG_FILE);
    let ckpt = out.join(CHECKPOINT_DIR);
    let resume = if s.resume {
        let state = TrainerState::load(&ckpt).with_context(|| format!("resuming from {}", ckpt.display()))?;
        // Rows written after the checkpoint are replayed.
        let kept: Vec<RunLogRow> = if log_path.exists() {
            read_table::<RunLogRow>(&log_path, RUN_LOG_KIND)?
                .into_iter()
                .filter(|r| r.epoch <= state.epoch)
                .collect()
        } else {
            Vec::new()
        };
        write_table(&log_path, RUN_LOG_KIND, &kept)?;
        Some(state)
    } else {
        if log_path.exists() {
            std::fs::remove_file(&log_path)?;
        }
        None
    };
    record(&out, s)?;

    let mut log = append_table(&log_path, RUN_LOG_KIND)?;
    let mut last_row = None;
    let every = s.checkpoint_every;
    let total = s.train.epochs;
    let outcome = train_abr(&inputs, &s.train, resume, |state, row, _| {
        let io = |e: std::io::Error| PolicyError::Io {
            path: log_path.display().to_string(),
            source: e,
        };
        log.serialize(row).map_err(|e| io(std::io::Error::other(e)))?;
        if row.epoch % every == 0 || row.epoch == total {
            log.flush().map_err(io)?;
            state.save(&ckpt)?;
        }
        last_row = Some(row.clone());
        Ok(())
    })?;
    log.flush()?;
    Ok(TrainSummary {
        out,
        last_epoch: outcome.state.epoch,
        last_row,
    })
}

pub fn run(args: &TrainAbrArgs, cfg: &ConfigFile) -> Result<()> {
    let s = cfg.apply("train-abr", args.settings())?;
    let summary = train(&s)?;
    match summary.last_row {
        Some(r) => println!(
            "epoch {}: entropy {:.4}, omega {:.4}, lambda {:.4}{}",
            r.epoch,
            r.mean_entropy,
            r.omega,
            r.lambda,
            r.eval_qoe_lin
                .map(|q| format!(", validation QoE_lin {q:.3}"))
                .unwrap_or_default()
        ),
        None => println!("nothing to do: checkpoint already at epoch {}", summary.last_epoch),
    }
    println!("outputs in {}", summary.out.display());
    Ok(())
}
