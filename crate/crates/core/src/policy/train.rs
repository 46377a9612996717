use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    blend, policy_entropy, ppo_update, GreedyPolicy, ObservationLayout, PolicyError, PpoConfig,
    RunningNorm, Transition,
};
use crate::data::{NetworkTrace, VideoManifest};
use crate::nn::Mlp;
use crate::qoe::{qoe_lin, LinWeights, QoeScorer};
use crate::select::{BanditConfig, DiscountedUcb, Selection};
use crate::sim::{rollout, SimConfig, Simulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorMode {
    /// Discounted UCB over the trace pool.
    Ucb,
    /// Uniformly random trace every epoch.
    Uniform,
}

/// How the reward blend weight evolves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OmegaMode {
    /// Normalized behavior entropy of the previous epoch.
    Adaptive,
    /// Held at a constant.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbrTrainConfig {
    pub epochs: usize,
    pub ppo: PpoConfig,
    pub bandit: BanditConfig,
    pub selector: SelectorMode,
    pub omega: OmegaMode,
    pub hidden: Vec<usize>,
    pub history: usize,
    pub lookahead: usize,
    pub seed: u64,
    pub sim: SimConfig,
    /// Held-out evaluation cadence in epochs; also runs after the last epoch.
    pub validate_every: usize,
}

impl Default for AbrTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            ppo: PpoConfig::default(),
            bandit: BanditConfig::default(),
            selector: SelectorMode::Ucb,
            omega: OmegaMode::Adaptive,
            hidden: vec![128, 128],
            history: 8,
            lookahead: 1,
            seed: 0,
            sim: SimConfig::default(),
            validate_every: 300,
        }
    }
}

/// Read-only material shared by every rollout.
#[derive(Debug, Clone, Copy)]
pub struct TrainInputs<'a> {
    pub traces: &'a [NetworkTrace],
    pub manifests: &'a [VideoManifest],
    pub weights: LinWeights,
    pub scorer: &'a QoeScorer,
    /// Held-out traces, played greedily on the first manifest.
    pub validation: &'a [NetworkTrace],
}

pub const RUN_LOG_HEADER: [&str; 11] = [
    "epoch",
    "trace_id",
    "mean_entropy",
    "omega",
    "lambda",
    "mean_reward",
    "eval_qoe_lin",
    "eval_qoe_dnn",
    "selector_value",
    "selector_mean",
    "selector_bonus",
];

/// One epoch of training; `omega` is the blend weight used during it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogRow {
    pub epoch: usize,
    pub trace_id: String,
    pub mean_entropy: f64,
    pub omega: f64,
    pub lambda: f64,
    pub mean_reward: f64,
    pub eval_qoe_lin: Option<f64>,
    pub eval_qoe_dnn: Option<f64>,
    pub selector_value: Option<f64>,
    pub selector_mean: Option<f64>,
    pub selector_bonus: Option<f64>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    /// Last completed epoch.
    pub epoch: usize,
    pub actor: Mlp,
    pub critic: Mlp,
    pub lambda: f64,
    pub omega: f64,
    pub lin_norm: RunningNorm,
    pub dnn_norm: RunningNorm,
    pub selector: DiscountedUcb,
    pub layout: ObservationLayout,
}

#[derive(Serialize, Deserialize)]
struct TrainerMeta {
    format: String,
    version: u32,
    epoch: usize,
    lambda: f64,
    omega: f64,
    lin_norm: RunningNorm,
    dnn_norm: RunningNorm,
    selector: DiscountedUcb,
    layout: ObservationLayout,
}

const TRAINER_FORMAT: &str = "rankabr-trainer";
const TRAINER_VERSION: u32 = 1;

fn write_atomic(path: &Path, text: &str) -> Result<(), PolicyError> {
    let tmp = path.with_extension("tmp");
    let io = |source| PolicyError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::write(&tmp, text).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

impl TrainerState {
    pub fn fresh(
        inputs: &TrainInputs<'_>,
        cfg: &AbrTrainConfig,
    ) -> Result<Self, PolicyError> {
        let levels = check_inputs(inputs)?;
        let layout = ObservationLayout {
            levels,
            history: cfg.history,
            lookahead: cfg.lookahead,
        };
        let mut actor = Mlp::init(layout.actor_spec(&cfg.hidden), cfg.seed)?;
        // Near-uniform initial policy.
        let last = actor.layers().len() - 1;
        actor.scale_layer(last, 0.01);
        let critic = Mlp::init(layout.critic_spec(&cfg.hidden), cfg.seed.wrapping_add(1))?;
        Ok(Self {
            epoch: 0,
            actor,
            critic,
            lambda: cfg.ppo.initial_lambda(levels),
            omega: match cfg.omega {
                OmegaMode::Adaptive => 1.0,
                OmegaMode::Fixed(w) => w,
            },
            lin_norm: RunningNorm::default(),
            dnn_norm: RunningNorm::default(),
            selector: DiscountedUcb::new(inputs.traces.iter().map(|t| t.id()), cfg.bandit)?,
            layout,
        })
    }

    /// Writes `actor.json`, `critic.json` and `trainer.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), PolicyError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| PolicyError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let meta = TrainerMeta {
            format: TRAINER_FORMAT.into(),
            version: TRAINER_VERSION,
            epoch: self.epoch,
            lambda: self.lambda,
            omega: self.omega,
            lin_norm: self.lin_norm,
            dnn_norm: self.dnn_norm,
            selector: self.selector.clone(),
            layout: self.layout,
        };
        write_atomic(&dir.join("actor.json"), &self.actor.to_checkpoint_json())?;
        write_atomic(&dir.join("critic.json"), &self.critic.to_checkpoint_json())?;
        let mut text = serde_json::to_string(&meta).expect("trainer state serializes");
        text.push('\n');
        write_atomic(&dir.join("trainer.json"), &text)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let dir = dir.as_ref();
        let path = dir.join("trainer.json");
        let text = std::fs::read_to_string(&path).map_err(|source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let meta: TrainerMeta =
            serde_json::from_str(&text).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        if meta.format != TRAINER_FORMAT || meta.version != TRAINER_VERSION {
            return Err(PolicyError::Checkpoint(format!(
                "unsupported trainer state {} v{}",
                meta.format, meta.version
            )));
        }
        let actor = Mlp::load(dir.join("actor.json"))?;
        let hidden = actor.spec().hidden.clone();
        if *actor.spec() != meta.layout.actor_spec(&hidden) {
            return Err(PolicyError::Net(crate::nn::NetError::ShapeMismatch(
                "actor does not match the stored observation layout".into(),
            )));
        }
        let critic = Mlp::load_expecting(dir.join("critic.json"), &meta.layout.critic_spec(&hidden))?;
        Ok(Self {
            epoch: meta.epoch,
            actor,
            critic,
            lambda: meta.lambda,
            omega: meta.omega,
            lin_norm: meta.lin_norm,
            dnn_norm: meta.dnn_norm,
            selector: meta.selector,
            layout: meta.layout,
        })
    }
}

fn check_inputs(inputs: &TrainInputs<'_>) -> Result<usize, PolicyError> {
    let first = inputs
        .manifests
        .first()
        .ok_or_else(|| PolicyError::InvalidConfig("no manifests".into()))?;
    if inputs.traces.is_empty() {
        return Err(PolicyError::InvalidConfig("no training traces".into()));
    }
    let levels = first.num_levels();
    if inputs.manifests.iter().any(|m| m.num_levels() != levels) {
        return Err(PolicyError::InvalidConfig(
            "all manifests must share one ladder size".into(),
        ));
    }
    Ok(levels)
}

fn sample_action(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Stochastic episode of the current actor; rewards are left for the learner.
#[allow(clippy::too_many_arguments)]
fn rollout_agent(
    actor: &Mlp,
    layout: &ObservationLayout,
    manifest: &VideoManifest,
    trace: &NetworkTrace,
    sim_cfg: SimConfig,
    weights: &LinWeights,
    scorer: &QoeScorer,
    seed: u64,
) -> Result<Vec<Transition>, PolicyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.random_range(0.0..trace.span());
    let mut sim = Simulator::reset(manifest, trace, sim_cfg, offset)?;
    let mut steps = Vec::with_capacity(manifest.num_chunks());
    let (mut vmaf, mut bitrate, mut rebuffer) = (Vec::new(), Vec::new(), Vec::new());
    let mut out = Vec::with_capacity(manifest.num_chunks());
    let mut obs = layout.build(sim.state(), &steps, manifest, &sim_cfg);
    while !sim.is_done() {
        let probs = actor.predict(&obs)?;
        let action = sample_action(&probs, rng.random());
        let step = sim.step(action)?;
        vmaf.push(step.chunk_vmaf);
        bitrate.push(step.chunk_bitrate);
        rebuffer.push(step.rebuffer);
        let raw_lin = weights.chunk_score(step.chunk_vmaf, step.rebuffer, step.vmaf_change);
        let raw_dnn = scorer.score_window(&vmaf, &bitrate, &rebuffer, vmaf.len() - 1);
        let done = step.done;
        steps.push(step);
        let next_obs = layout.build(sim.state(), &steps, manifest, &sim_cfg);
        out.push(Transition {
            obs: std::mem::take(&mut obs),
            action,
            prob: probs[action],
            reward: 0.0,
            next_obs: next_obs.clone(),
            done,
            entropy: policy_entropy(&probs),
            raw_lin,
            raw_dnn,
        });
        obs = next_obs;
    }
    Ok(out)
}

/// Greedy-policy results on a trace set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyEval {
    pub mean_qoe_lin: f64,
    pub mean_qoe_dnn: f64,
    pub per_trace: Vec<(String, f64, f64)>,
}

/// Plays every trace from its start with the arg-max policy.
pub fn evaluate_policy(
    actor: &Mlp,
    layout: ObservationLayout,
    manifest: &VideoManifest,
    traces: &[NetworkTrace],
    sim_cfg: SimConfig,
    weights: &LinWeights,
    scorer: &QoeScorer,
) -> Result<PolicyEval, PolicyError> {
    let mut per_trace = Vec::with_capacity(traces.len());
    for t in traces {
        let mut policy = GreedyPolicy { actor, layout };
        let r = rollout(&mut policy, manifest, t, sim_cfg, 0.0, t.id())?;
        per_trace.push((
            t.id().to_string(),
            qoe_lin(&r.session, weights),
            scorer.mean_window_score(&r.session),
        ));
    }
    let n = per_trace.len().max(1) as f64;
    Ok(PolicyEval {
        mean_qoe_lin: per_trace.iter().map(|p| p.1).sum::<f64>() / n,
        mean_qoe_dnn: per_trace.iter().map(|p| p.2).sum::<f64>() / n,
        per_trace,
    })
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

pub struct TrainOutcome {
    pub state: TrainerState,
    pub rows: Vec<RunLogRow>,
    pub selections: Vec<Selection>,
}

/// Runs epochs `state.epoch + 1 ..= cfg.epochs`.
///
/// Each epoch picks a trace and a manifest, rolls out `agents` stochastic
/// episodes in parallel, standardizes and blends their rewards, applies one
/// PPO update and moves the blend weight to the epoch's normalized entropy.
/// `on_epoch` sees the state after every epoch, for logging and checkpoints.
pub fn train_abr(
    inputs: &TrainInputs<'_>,
    cfg: &AbrTrainConfig,
    resume: Option<TrainerState>,
    mut on_epoch: impl FnMut(&TrainerState, &RunLogRow, Option<&Selection>) -> Result<(), PolicyError>,
) -> Result<TrainOutcome, PolicyError> {
    cfg.ppo.validate()?;
    cfg.sim.validate(inputs.manifests.first().map_or(0.0, |m| m.chunk_duration()))?;
    let levels = check_inputs(inputs)?;
    let mut state = match resume {
        Some(s) => s,
        None => TrainerState::fresh(inputs, cfg)?,
    };
    let uniform_entropy = (levels as f64).ln();
    let mut rows = Vec::new();
    let mut selections = Vec::new();
    for epoch in state.epoch + 1..=cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let selection = match cfg.selector {
            SelectorMode::Ucb => Some(state.selector.select(epoch as u64)),
            SelectorMode::Uniform => None,
        };
        let trace_idx = match &selection {
            Some(s) => s.arm,
            None => rng.random_range(0..inputs.traces.len()),
        };
        let trace = &inputs.traces[trace_idx];
        let manifest = &inputs.manifests[rng.random_range(0..inputs.manifests.len())];
        let seeds: Vec<u64> = (0..cfg.ppo.agents).map(|_| rng.random()).collect();

        let actor = &state.actor;
        let layout = &state.layout;
        let run = |seed: u64| {
            rollout_agent(actor, layout, manifest, trace, cfg.sim, &inputs.weights, inputs.scorer, seed)
        };
        let trajectories: Vec<Result<Vec<Transition>, PolicyError>> = if seeds.len() == 1 {
            vec![run(seeds[0])]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = seeds.iter().map(|&s| scope.spawn(move || run(s))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("rollout worker panicked"))
                    .collect()
            })
        };
        let mut batch = Vec::new();
        for t in trajectories {
            batch.extend(t?);
        }

        let omega_used = state.omega;
        for t in &mut batch {
            let lin_z = state.lin_norm.push(t.raw_lin);
            let dnn_z = state.dnn_norm.push(t.raw_dnn);
            t.reward = blend(lin_z, dnn_z, omega_used);
        }
        let mean_reward = batch.iter().map(|t| t.reward).sum::<f64>() / batch.len() as f64;
        let stats = ppo_update(&batch, &mut state.actor, &mut state.critic, &cfg.ppo, &mut state.lambda)?;
        if !state.actor.all_finite() || !state.critic.all_finite() {
            return Err(PolicyError::Diverged(epoch));
        }
        let normalized = (stats.behavior_entropy / uniform_entropy).clamp(0.0, 1.0);
        if let Some(s) = &selection {
            state.selector.record_index(s.arm, normalized)?;
        }
        if let OmegaMode::Adaptive = cfg.omega {
            state.omega = normalized;
        }

        let validate = !inputs.validation.is_empty()
            && ((cfg.validate_every > 0 && epoch % cfg.validate_every == 0) || epoch == cfg.epochs);
        let eval = if validate {
            Some(evaluate_policy(
                &state.actor,
                state.layout,
                &inputs.manifests[0],
                inputs.validation,
                cfg.sim,
                &inputs.weights,
                inputs.scorer,
            )?)
        } else {
            None
        };
        state.epoch = epoch;
        let row = RunLogRow {
            epoch,
            trace_id: trace.id().to_string(),
            mean_entropy: stats.behavior_entropy,
            omega: omega_used,
            lambda: state.lambda,
            mean_reward,
            eval_qoe_lin: eval.as_ref().map(|e| e.mean_qoe_lin),
            eval_qoe_dnn: eval.as_ref().map(|e| e.mean_qoe_dnn),
            selector_value: selection.as_ref().map(|s| s.value),
            selector_mean: selection.as_ref().map(|s| s.mean).filter(|m| m.is_finite()),
            selector_bonus: selection.as_ref().map(|s| s.bonus),
        };
        on_epoch(&state, &row, selection.as_ref())?;
        rows.push(row);
        selections.extend(selection);
    }
    Ok(TrainOutcome {
        state,
        rows,
        selections,
    })
}
