//! Actor-critic ABR policy trained with Dual-Clip PPO on blended QoE rewards.

mod ppo;
mod train;

use serde::{Deserialize, Serialize};

use crate::data::VideoManifest;
use crate::nn::{Mlp, MlpSpec, NetError, OutputHead};
use crate::qoe::QoeError;
use crate::select::SelectError;
use crate::sim::{BitrateSelector, PlaybackContext, SimConfig, SimError, SimState, StepOutcome};

pub use ppo::{ppo_update, PpoStats, Transition};
pub use train::{
    evaluate_policy, train_abr, AbrTrainConfig, OmegaMode, PolicyEval, RunLogRow, SelectorMode,
    TrainInputs, TrainOutcome, TrainerState, RUN_LOG_HEADER,
};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("dual clip constant {c} must exceed 1 + epsilon = {}", 1.0 + epsilon)]
    InvalidClipConfig { epsilon: f64, c: f64 },
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("non-finite parameter at epoch {0}")]
    Diverged(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Qoe(#[from] QoeError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    /// Clip ratio ε.
    pub epsilon: f64,
    /// Dual-clip constant c.
    pub dual_clip: f64,
    /// Reward discount γ′.
    pub gamma: f64,
    /// Initial entropy weight; `None` means ln |A|.
    pub lambda_init: Option<f64>,
    pub h_target: f64,
    /// Gradient passes over each batch.
    pub n_policy: usize,
    pub learning_rate: f64,
    /// Step size of the entropy-weight update.
    pub lambda_lr: f64,
    /// Parallel rollouts per update.
    pub agents: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            dual_clip: 3.0,
            gamma: 0.99,
            lambda_init: None,
            h_target: 0.1,
            n_policy: 5,
            learning_rate: 1e-4,
            lambda_lr: 1e-4,
            agents: 16,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.dual_clip > 1.0 + self.epsilon) || !(self.epsilon > 0.0) {
            return Err(PolicyError::InvalidClipConfig {
                epsilon: self.epsilon,
                c: self.dual_clip,
            });
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(PolicyError::InvalidConfig("gamma must be in (0, 1]".into()));
        }
        if self.n_policy == 0 || self.agents == 0 {
            return Err(PolicyError::InvalidConfig(
                "n_policy and agents must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.lambda_lr >= 0.0) {
            return Err(PolicyError::InvalidConfig("learning rates must be positive".into()));
        }
        Ok(())
    }

    pub fn initial_lambda(&self, actions: usize) -> f64 {
        self.lambda_init.unwrap_or((actions as f64).ln())
    }
}

/// Shape of the policy input for a given ladder size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub levels: usize,
    /// Past chunks of throughput and download time.
    pub history: usize,
    /// Upcoming chunks whose sizes and VMAF are visible.
    pub lookahead: usize,
}

/// Download times are divided by this many seconds.
const DOWNLOAD_TIME_SCALE: f64 = 10.0;

impl ObservationLayout {
    pub fn new(levels: usize) -> Self {
        Self {
            levels,
            history: 8,
            lookahead: 1,
        }
    }

    /// buffer, last VMAF, two histories, next sizes and VMAF, chunks left.
    pub fn len(&self) -> usize {
        2 + 2 * self.history + 2 * self.levels * self.lookahead + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Normalized observation before the next chunk is requested.
    ///
    /// Histories hold the most recent chunks last and are zero-padded at the
    /// front; lookahead slots past the end of the video are zero.
    pub fn build(
        &self,
        state: &SimState,
        history: &[StepOutcome],
        manifest: &VideoManifest,
        cfg: &SimConfig,
    ) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.len());
        obs.push(state.buffer / cfg.buffer_cap);
        obs.push(state.last_vmaf.unwrap_or(0.0) / 100.0);
        let ladder_max = manifest.max_bitrate();
        let start = history.len().saturating_sub(self.history);
        let recent = &history[start..];
        let pad = self.history - recent.len();
        obs.extend(std::iter::repeat_n(0.0, pad));
        obs.extend(recent.iter().map(|s| s.throughput_mbps() / ladder_max));
        obs.extend(std::iter::repeat_n(0.0, pad));
        obs.extend(recent.iter().map(|s| s.download_time / DOWNLOAD_TIME_SCALE));
        let max_size = manifest.max_size() as f64;
        for ahead in 0..self.lookahead {
            let chunk = state.chunk_index + ahead;
            if chunk < manifest.num_chunks() {
                obs.extend((0..self.levels).map(|l| manifest.size(chunk, l) as f64 / max_size));
                obs.extend((0..self.levels).map(|l| manifest.vmaf(chunk, l) / 100.0));
            } else {
                obs.extend(std::iter::repeat_n(0.0, 2 * self.levels));
            }
        }
        let n = manifest.num_chunks();
        obs.push((n - state.chunk_index.min(n)) as f64 / n as f64);
        obs
    }

    pub fn actor_spec(&self, hidden: &[usize]) -> MlpSpec {
        MlpSpec::new(self.len(), hidden, self.levels, OutputHead::Softmax)
    }

    pub fn critic_spec(&self, hidden: &[usize]) -> MlpSpec {
        MlpSpec::new(self.len(), hidden, 1, OutputHead::Linear)
    }
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn policy_entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Mean entropy of a trajectory's action distributions, normalized by the
/// entropy of the uniform distribution over the same actions.
pub fn omega<P: AsRef<[f64]>>(trajectory: &[P]) -> Result<f64, PolicyError> {
    if trajectory.is_empty() {
        return Err(PolicyError::EmptyTrajectory);
    }
    let sum: f64 = trajectory
        .iter()
        .map(|p| {
            let p = p.as_ref();
            policy_entropy(p) / (p.len() as f64).ln()
        })
        .sum();
    Ok((sum / trajectory.len() as f64).clamp(0.0, 1.0))
}

/// `ω · lin + (1 − ω) · dnn` on already standardized terms.
pub fn blend(lin_z: f64, dnn_z: f64, omega: f64) -> f64 {
    omega * lin_z + (1.0 - omega) * dnn_z
}

/// Exponential running mean and variance with bias correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub momentum: f64,
    pub std_floor: f64,
    mean: f64,
    sq: f64,
    steps: u64,
}

impl Default for RunningNorm {
    fn default() -> Self {
        Self::new(0.999, 1e-3)
    }
}

impl RunningNorm {
    pub fn new(momentum: f64, std_floor: f64) -> Self {
        Self {
            momentum,
            std_floor,
            mean: 0.0,
            sq: 0.0,
            steps: 0,
        }
    }

    pub fn observe(&mut self, x: f64) {
        self.mean = self.momentum * self.mean + (1.0 - self.momentum) * x;
        self.sq = self.momentum * self.sq + (1.0 - self.momentum) * x * x;
        self.steps += 1;
    }

    pub fn mean(&self) -> f64 {
        if self.steps == 0 {
            return 0.0;
        }
        self.mean / (1.0 - self.momentum.powi(self.steps.min(i32::MAX as u64) as i32))
    }

    pub fn std(&self) -> f64 {
        if self.steps == 0 {
            return 1.0;
        }
        let c = 1.0 - self.momentum.powi(self.steps.min(i32::MAX as u64) as i32);
        let m = self.mean / c;
        ((self.sq / c - m * m).max(0.0)).sqrt().max(self.std_floor)
    }

    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.mean()) / self.std()
    }

    /// Folds `x` into the statistics, then standardizes it.
    pub fn push(&mut self, x: f64) -> f64 {
        self.observe(x);
        self.standardize(x)
    }
}

/// One-step TD advantage `r + γ′ V(s′) − V(s)`, with `V(s′) = 0` at the end.
pub fn advantage(reward: f64, value: f64, next_value: f64, done: bool, gamma: f64) -> f64 {
    let boot = if done { 0.0 } else { gamma * next_value };
    reward + boot - value
}

/// Advantages of a whole trajectory.
pub fn advantages(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    dones: &[bool],
    gamma: f64,
) -> Vec<f64> {
    (0..rewards.len())
        .map(|t| advantage(rewards[t], values[t], next_values[t], dones[t], gamma))
        .collect()
}

/// Dual-clip surrogate and its derivative with respect to the ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualClip {
    pub value: f64,
    pub d_ratio: f64,
}

pub fn dual_clip_loss(ratio: f64, adv: f64, epsilon: f64, c: f64) -> Result<DualClip, PolicyError> {
    if !(c > 1.0 + epsilon) {
        return Err(PolicyError::InvalidClipConfig { epsilon, c });
    }
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * adv;
    let inside = (1.0 - epsilon..=1.0 + epsilon).contains(&ratio);
    let (mut value, mut d_ratio) = if unclipped <= clipped || inside {
        (unclipped, adv)
    } else {
        (clipped, 0.0)
    };
    if adv < 0.0 && c * adv > value {
        value = c * adv;
        d_ratio = 0.0;
    }
    Ok(DualClip { value, d_ratio })
}

/// `max(0, λ + lr · (H_target − H))`.
pub fn update_lambda(lambda: f64, mean_entropy: f64, h_target: f64, lr: f64) -> f64 {
    (lambda + lr * (h_target - mean_entropy)).max(0.0)
}

pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Deterministic (arg-max) execution of a trained actor.
#[derive(Debug, Clone)]
pub struct GreedyPolicy<'a> {
    pub actor: &'a Mlp,
    pub layout: ObservationLayout,
}

impl BitrateSelector for GreedyPolicy<'_> {
    fn select(&mut self, ctx: &PlaybackContext<'_>) -> Result<usize, String> {
        let obs = self.layout.build(ctx.state, ctx.history, ctx.manifest, ctx.cfg);
        let probs = self.actor.predict(&obs).map_err(|e| e.to_string())?;
        Ok(argmax(&probs))
    }
}
