//! Classical ABR heuristics: throughput rate-based, buffer-based (BBA) and
//! RobustMPC.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::data::VideoManifest;
use crate::qoe::{LinWeights, QoeScorer};
use crate::sim::{BitrateSelector, PlaybackContext, SimConfig, StepOutcome};

/// Harmonic mean of positive samples; `None` when there are none.
pub fn harmonic_mean(samples: &[f64]) -> Option<f64> {
    let pos: Vec<f64> = samples.iter().copied().filter(|v| *v > 0.0).collect();
    if pos.is_empty() {
        return None;
    }
    Some(pos.len() as f64 / pos.iter().map(|v| 1.0 / v).sum::<f64>())
}

/// Highest ladder index whose rate does not exceed `mbps`, else 0.
pub fn highest_sustainable(ladder: &[f64], mbps: f64) -> usize {
    ladder.iter().rposition(|&r| r <= mbps).unwrap_or(0)
}

pub const RATE_WINDOW: usize = 5;

/// Picks by the harmonic mean of the last `RATE_WINDOW` throughputs.
pub fn rate_based_select(throughputs: &[f64], ladder: &[f64]) -> usize {
    let start = throughputs.len().saturating_sub(RATE_WINDOW);
    harmonic_mean(&throughputs[start..]).map_or(0, |hm| highest_sustainable(ladder, hm))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RateBased;

impl BitrateSelector for RateBased {
    fn select(&mut self, ctx: &PlaybackContext<'_>) -> Result<usize, String> {
        Ok(rate_based_select(
            &ctx.recent_throughputs(RATE_WINDOW),
            ctx.manifest.ladder(),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BbaConfig {
    pub reservoir: f64,
    pub cushion: f64,
}

impl Default for BbaConfig {
    fn default() -> Self {
        Self {
            reservoir: 5.0,
            cushion: 30.0,
        }
    }
}

/// Buffer-to-bitrate map: lowest level inside the reservoir, highest above
/// reservoir plus cushion, linear (rounded down) in between.
pub fn bba_select(buffer: f64, cfg: &BbaConfig, levels: usize) -> usize {
    let top = levels - 1;
    if buffer <= cfg.reservoir {
        0
    } else if buffer >= cfg.reservoir + cfg.cushion {
        top
    } else {
        let frac = (buffer - cfg.reservoir) / cfg.cushion;
        ((frac * top as f64).floor() as usize).min(top)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Bba {
    pub cfg: BbaConfig,
}

impl BitrateSelector for Bba {
    fn select(&mut self, ctx: &PlaybackContext<'_>) -> Result<usize, String> {
        Ok(bba_select(ctx.state.buffer, &self.cfg, ctx.manifest.num_levels()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub throughput_window: usize,
    pub error_window: usize,
    pub weights: LinWeights,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            throughput_window: 5,
            error_window: 5,
            weights: LinWeights::REFERENCE,
        }
    }
}

/// Buffer after one planned download at a predicted throughput, using the
/// simulator's arithmetic: `(download_time, rebuffer, buffer_after)`.
pub fn plan_step(
    buffer: f64,
    bytes: u64,
    mbps: f64,
    chunk_duration: f64,
    sim: &SimConfig,
) -> (f64, f64, f64) {
    let download = sim.per_chunk_rtt + bytes as f64 * 8.0 / (mbps * 1e6);
    let rebuffer = (download - buffer).max(0.0);
    let after = ((buffer - download).max(0.0) + chunk_duration).min(sim.buffer_cap);
    (download, rebuffer, after)
}

/// Objective maximized over planned chunk sequences.
#[derive(Debug, Clone)]
pub enum MpcObjective {
    Linear,
    /// Experimental: sum of the neural scorer over each planned window.
    Neural(Box<QoeScorer>),
}

/// RobustMPC: exhaustive lookahead over a throughput forecast discounted by
/// the worst recent relative forecast error.
#[derive(Debug, Clone)]
pub struct RobustMpc {
    pub cfg: MpcConfig,
    pub objective: MpcObjective,
    errors: VecDeque<f64>,
    last_prediction: Option<f64>,
    seen: usize,
}

struct Planner<'a> {
    manifest: &'a VideoManifest,
    sim: &'a SimConfig,
    weights: LinWeights,
    scorer: Option<&'a QoeScorer>,
    mbps: f64,
    first: usize,
    depth: usize,
    vmaf: Vec<f64>,
    bitrate: Vec<f64>,
    rebuffer: Vec<f64>,
    best: f64,
    best_first: usize,
}

impl Planner<'_> {
    fn search(&mut self, level: usize, buffer: f64, last_vmaf: Option<f64>, acc: f64, head: usize) {
        if level == self.depth {
            if acc > self.best {
                self.best = acc;
                self.best_first = head;
            }
            return;
        }
        let chunk = self.first + level;
        for a in 0..self.manifest.num_levels() {
            let (_, stall, after) = plan_step(
                buffer,
                self.manifest.size(chunk, a),
                self.mbps,
                self.manifest.chunk_duration(),
                self.sim,
            );
            let q = self.manifest.vmaf(chunk, a);
            let gain = match self.scorer {
                None => self
                    .weights
                    .chunk_score(q, stall, last_vmaf.map_or(0.0, |p| q - p)),
                Some(scorer) => {
                    self.vmaf.push(q);
                    self.bitrate.push(self.manifest.ladder()[a]);
                    self.rebuffer.push(stall);
                    let end = self.vmaf.len() - 1;
                    scorer.score_window(&self.vmaf, &self.bitrate, &self.rebuffer, end)
                }
            };
            let head = if level == 0 { a } else { head };
            self.search(level + 1, after, Some(q), acc + gain, head);
            if self.scorer.is_some() {
                self.vmaf.pop();
                self.bitrate.pop();
                self.rebuffer.pop();
            }
        }
    }
}

impl RobustMpc {
    pub fn new(cfg: MpcConfig) -> Self {
        Self {
            cfg,
            objective: MpcObjective::Linear,
            errors: VecDeque::new(),
            last_prediction: None,
            seen: 0,
        }
    }

    pub fn with_scorer(cfg: MpcConfig, scorer: QoeScorer) -> Self {
        Self {
            objective: MpcObjective::Neural(Box::new(scorer)),
            ..Self::new(cfg)
        }
    }

    /// Relative forecast errors currently remembered, oldest first.
    pub fn errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.errors.iter().copied()
    }

    fn observe(&mut self, history: &[StepOutcome]) {
        while self.seen < history.len() {
            let actual = history[self.seen].throughput_mbps();
            if let Some(pred) = self.last_prediction.take() {
                if actual > 0.0 {
                    self.errors.push_back((pred - actual).abs() / actual);
                    while self.errors.len() > self.cfg.error_window {
                        self.errors.pop_front();
                    }
                }
            }
            self.seen += 1;
        }
    }

    /// Forecast for the next chunk given past throughputs.
    pub fn robust_throughput(&self, throughputs: &[f64]) -> Option<f64> {
        let start = throughputs.len().saturating_sub(self.cfg.throughput_window);
        let hm = harmonic_mean(&throughputs[start..])?;
        let max_err = self.errors.iter().copied().fold(0.0, f64::max);
        Some(hm / (1.0 + max_err))
    }

    /// Best first action for chunks `[first, first + horizon)` starting from
    /// `buffer`, with `mbps` assumed throughout.
    #[allow(clippy::too_many_arguments)]
    pub fn plan(
        &self,
        manifest: &VideoManifest,
        sim: &SimConfig,
        first: usize,
        buffer: f64,
        last_vmaf: Option<f64>,
        mbps: f64,
        past: &[StepOutcome],
    ) -> usize {
        let depth = self.cfg.horizon.min(manifest.num_chunks() - first);
        let scorer = match &self.objective {
            MpcObjective::Linear => None,
            MpcObjective::Neural(s) => Some(s.as_ref()),
        };
        let mut p = Planner {
            manifest,
            sim,
            weights: self.cfg.weights,
            scorer,
            mbps,
            first,
            depth,
            vmaf: past.iter().map(|s| s.chunk_vmaf).collect(),
            bitrate: past.iter().map(|s| s.chunk_bitrate).collect(),
            rebuffer: past.iter().map(|s| s.rebuffer).collect(),
            best: f64::NEG_INFINITY,
            best_first: 0,
        };
        p.search(0, buffer, last_vmaf, 0.0, 0);
        p.best_first
    }
}

impl BitrateSelector for RobustMpc {
    fn select(&mut self, ctx: &PlaybackContext<'_>) -> Result<usize, String> {
        self.observe(ctx.history);
        let tp = ctx.recent_throughputs(self.cfg.throughput_window);
        let Some(mbps) = self.robust_throughput(&tp) else {
            return Ok(0);
        };
        self.last_prediction = harmonic_mean(&tp);
        Ok(self.plan(
            ctx.manifest,
            ctx.cfg,
            ctx.state.chunk_index,
            ctx.state.buffer,
            ctx.state.last_vmaf,
            mbps,
            ctx.history,
        ))
    }

    fn reset(&mut self) {
        self.errors.clear();
        self.last_prediction = None;
        self.seen = 0;
    }
}
