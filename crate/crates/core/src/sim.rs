//! Chunk-level virtual player driven by a bandwidth trace.
//!
//! A chunk download integrates the trace's piecewise-constant bandwidth from
//! the current cursor, then pays a fixed per-chunk RTT. While downloading, the
//! buffer drains; whatever the download outlasts is rebuffering. When the
//! downloaded chunk would push the buffer past its cap, the player idles until
//! the buffer is back at the cap. RTT and idle time both consume trace time.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{NetworkTrace, SessionRecord, VideoManifest};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error("start offset {offset} outside trace span {span}")]
    OffsetOutOfRange { offset: f64, span: f64 },
    #[error("episode finished")]
    EpisodeFinished,
    #[error("action {action} outside ladder of {levels} levels")]
    InvalidAction { action: usize, levels: usize },
    #[error("policy failed at chunk {chunk}: {message}")]
    Policy { chunk: usize, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Seconds of video the player may hold.
    pub buffer_cap: f64,
    /// Fixed request overhead added to every chunk download, seconds.
    pub per_chunk_rtt: f64,
    /// Sampling step for reconstructed buffer timelines, seconds.
    pub drain_granularity: f64,
    /// Restart the trace from its beginning when it runs out.
    pub trace_wraps: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            buffer_cap: 60.0,
            per_chunk_rtt: 0.08,
            drain_granularity: 0.5,
            trace_wraps: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, chunk_duration: f64) -> Result<(), SimError> {
        if !(self.buffer_cap > chunk_duration) {
            return Err(SimError::InvalidConfig(format!(
                "buffer_cap {} must exceed chunk duration {chunk_duration}",
                self.buffer_cap
            )));
        }
        if !(self.per_chunk_rtt >= 0.0 && self.per_chunk_rtt.is_finite()) {
            return Err(SimError::InvalidConfig("per_chunk_rtt must be >= 0".into()));
        }
        if !(self.drain_granularity > 0.0) {
            return Err(SimError::InvalidConfig(
                "drain_granularity must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Position inside a trace: the active sample and seconds spent in it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceCursor {
    pub sample: usize,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub buffer: f64,
    pub chunk_index: usize,
    pub cursor: TraceCursor,
    pub wall_clock: f64,
    pub last_action: Option<usize>,
    pub last_vmaf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub chunk_index: usize,
    pub action: usize,
    pub chunk_bytes: u64,
    pub download_time: f64,
    pub rebuffer: f64,
    pub sleep_time: f64,
    pub buffer_before: f64,
    pub buffer_after: f64,
    pub chunk_vmaf: f64,
    pub chunk_bitrate: f64,
    pub vmaf_change: f64,
    pub done: bool,
}

impl StepOutcome {
    /// Delivered throughput of the chunk in Mbps (size over download time).
    pub fn throughput_mbps(&self) -> f64 {
        if self.download_time > 0.0 {
            self.chunk_bytes as f64 * 8.0 / self.download_time / 1e6
        } else {
            0.0
        }
    }
}

/// Single-owner player over shared, read-only content and channel.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    manifest: &'a VideoManifest,
    trace: &'a NetworkTrace,
    cfg: SimConfig,
    state: SimState,
}

impl<'a> Simulator<'a> {
    pub fn reset(
        manifest: &'a VideoManifest,
        trace: &'a NetworkTrace,
        cfg: SimConfig,
        start_offset: f64,
    ) -> Result<Self, SimError> {
        cfg.validate(manifest.chunk_duration())?;
        let span = trace.span();
        let offset = if cfg.trace_wraps {
            start_offset.rem_euclid(span)
        } else if (0.0..=span).contains(&start_offset) {
            start_offset
        } else {
            return Err(SimError::OffsetOutOfRange {
                offset: start_offset,
                span,
            });
        };
        let mut sim = Self {
            manifest,
            trace,
            cfg,
            state: SimState {
                buffer: 0.0,
                chunk_index: 0,
                cursor: TraceCursor {
                    sample: 0,
                    offset: 0.0,
                },
                wall_clock: 0.0,
                last_action: None,
                last_vmaf: None,
            },
        };
        sim.advance(offset);
        Ok(sim)
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn manifest(&self) -> &'a VideoManifest {
        self.manifest
    }

    pub fn trace(&self) -> &'a NetworkTrace {
        self.trace
    }

    pub fn is_done(&self) -> bool {
        self.state.chunk_index >= self.manifest.num_chunks()
    }

    fn segment_len(&self, sample: usize) -> f64 {
        if !self.cfg.trace_wraps && sample + 1 == self.trace.len() {
            f64::INFINITY
        } else {
            self.trace.segment_duration(sample)
        }
    }

    fn next_segment(&mut self) {
        let c = &mut self.state.cursor;
        c.offset = 0.0;
        c.sample += 1;
        if c.sample == self.trace.len() {
            c.sample = 0;
        }
    }

    /// Moves the cursor forward by `dt` seconds of trace time.
    fn advance(&mut self, mut dt: f64) {
        while dt > 0.0 {
            let left = self.segment_len(self.state.cursor.sample) - self.state.cursor.offset;
            if dt < left {
                self.state.cursor.offset += dt;
                return;
            }
            dt -= left;
            self.next_segment();
        }
    }

    /// Seconds needed to move `bits` from the cursor; advances the cursor.
    fn transfer(&mut self, bits: f64) -> f64 {
        let mut remaining = bits;
        let mut elapsed = 0.0;
        while remaining > 0.0 {
            let rate = self.trace.samples()[self.state.cursor.sample].mbps * 1e6;
            let left = self.segment_len(self.state.cursor.sample) - self.state.cursor.offset;
            let capacity = rate * left;
            if remaining < capacity {
                let dt = remaining / rate;
                elapsed += dt;
                self.state.cursor.offset += dt;
                return elapsed;
            }
            remaining -= capacity;
            elapsed += left;
            self.next_segment();
        }
        elapsed
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome, SimError> {
        if self.is_done() {
            return Err(SimError::EpisodeFinished);
        }
        let levels = self.manifest.num_levels();
        if action >= levels {
            return Err(SimError::InvalidAction { action, levels });
        }
        let chunk = self.state.chunk_index;
        let bytes = self.manifest.size(chunk, action);
        let buffer_before = self.state.buffer;

        let transfer_time = self.transfer(bytes as f64 * 8.0);
        self.advance(self.cfg.per_chunk_rtt);
        let download_time = transfer_time + self.cfg.per_chunk_rtt;

        let rebuffer = (download_time - buffer_before).max(0.0);
        let buffer_mid = (buffer_before - download_time).max(0.0) + self.manifest.chunk_duration();
        let (sleep_time, buffer_after) = if buffer_mid > self.cfg.buffer_cap {
            (buffer_mid - self.cfg.buffer_cap, self.cfg.buffer_cap)
        } else {
            (0.0, buffer_mid)
        };
        self.advance(sleep_time);

        let vmaf = self.manifest.vmaf(chunk, action);
        let vmaf_change = self.state.last_vmaf.map_or(0.0, |prev| vmaf - prev);
        self.state.buffer = buffer_after;
        self.state.wall_clock += download_time + sleep_time;
        self.state.chunk_index += 1;
        self.state.last_action = Some(action);
        self.state.last_vmaf = Some(vmaf);

        Ok(StepOutcome {
            chunk_index: chunk,
            action,
            chunk_bytes: bytes,
            download_time,
            rebuffer,
            sleep_time,
            buffer_before,
            buffer_after,
            chunk_vmaf: vmaf,
            chunk_bitrate: self.manifest.ladder()[action],
            vmaf_change,
            done: self.is_done(),
        })
    }
}

/// What a bitrate selector sees before choosing the next chunk's level.
#[derive(Debug, Clone, Copy)]
pub struct PlaybackContext<'a> {
    pub manifest: &'a VideoManifest,
    pub cfg: &'a SimConfig,
    pub state: &'a SimState,
    /// Outcomes of every chunk downloaded so far, oldest first.
    pub history: &'a [StepOutcome],
}

impl PlaybackContext<'_> {
    /// Throughputs of the most recent `n` chunks, oldest first.
    pub fn recent_throughputs(&self, n: usize) -> Vec<f64> {
        let start = self.history.len().saturating_sub(n);
        self.history[start..]
            .iter()
            .map(StepOutcome::throughput_mbps)
            .collect()
    }
}

pub trait BitrateSelector {
    fn select(&mut self, ctx: &PlaybackContext<'_>) -> Result<usize, String>;

    /// Clears per-session state before a new episode.
    fn reset(&mut self) {}
}

impl<F> BitrateSelector for F
where
    F: FnMut(&PlaybackContext<'_>) -> Result<usize, String>,
{
    fn select(&mut self, ctx: &PlaybackContext<'_>) -> Result<usize, String> {
        self(ctx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub session: SessionRecord,
    pub steps: Vec<StepOutcome>,
}

impl Rollout {
    pub fn total_rebuffer(&self) -> f64 {
        self.steps.iter().map(|s| s.rebuffer).sum()
    }

    pub fn wall_clock(&self) -> f64 {
        self.steps.iter().map(|s| s.download_time + s.sleep_time).sum()
    }

    /// Writes one JSON object per step.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<(), SimError> {
        for s in &self.steps {
            serde_json::to_writer(&mut w, s).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Plays every chunk of `manifest` over `trace` with `policy`.
pub fn rollout(
    policy: &mut dyn BitrateSelector,
    manifest: &VideoManifest,
    trace: &NetworkTrace,
    cfg: SimConfig,
    start_offset: f64,
    session_id: &str,
) -> Result<Rollout, SimError> {
    policy.reset();
    let mut sim = Simulator::reset(manifest, trace, cfg, start_offset)?;
    let mut steps = Vec::with_capacity(manifest.num_chunks());
    while !sim.is_done() {
        let chunk = sim.state().chunk_index;
        let ctx = PlaybackContext {
            manifest,
            cfg: &cfg,
            state: sim.state(),
            history: &steps,
        };
        let action = policy
            .select(&ctx)
            .map_err(|message| SimError::Policy { chunk, message })?;
        steps.push(sim.step(action)?);
    }
    let session = session_from_steps(session_id, &steps);
    Ok(Rollout { session, steps })
}

pub fn session_from_steps(session_id: &str, steps: &[StepOutcome]) -> SessionRecord {
    SessionRecord {
        session_id: session_id.to_string(),
        vmaf: steps.iter().map(|s| s.chunk_vmaf).collect(),
        bitrate: steps.iter().map(|s| s.chunk_bitrate).collect(),
        rebuffer: steps.iter().map(|s| s.rebuffer).collect(),
    }
}

/// Buffer occupancy sampled every `granularity` seconds of wall clock.
///
/// Between events the buffer drains at playback speed while non-empty; it
/// jumps by one chunk when a download completes and stays flat while idle
/// at the cap.
pub fn buffer_timeline(steps: &[StepOutcome], chunk_duration: f64, granularity: f64) -> Vec<(f64, f64)> {
    // Piecewise-linear breakpoints (time, level).
    let mut points = vec![(0.0, steps.first().map_or(0.0, |s| s.buffer_before))];
    let mut t = 0.0;
    for s in steps {
        let low = (s.buffer_before - s.download_time).max(0.0);
        let end = t + s.download_time;
        points.push((t + s.buffer_before.min(s.download_time), low));
        points.push((end, low));
        points.push((end, low + chunk_duration));
        t = end + s.sleep_time;
        points.push((t, s.buffer_after));
    }
    let total = t;
    let mut out = Vec::new();
    let mut k = 0usize;
    let mut seg = 0usize;
    loop {
        let time = k as f64 * granularity;
        if time > total {
            break;
        }
        while seg + 1 < points.len() && points[seg + 1].0 < time {
            seg += 1;
        }
        let level = if seg + 1 < points.len() {
            let (t0, b0) = points[seg];
            let (t1, b1) = points[seg + 1];
            if t1 > t0 {
                b0 + (b1 - b0) * (time - t0) / (t1 - t0)
            } else {
                b1
            }
        } else {
            points[seg].1
        };
        out.push((time, level));
        k += 1;
    }
    out
}
