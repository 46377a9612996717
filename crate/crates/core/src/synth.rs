//! Synthetic content, channels and rater panels for tests and desk-scale runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    ChunkEncoding, DataError, NetworkTrace, RatingDataset, ScoreRow, SessionRecord, VideoManifest,
    DEFAULT_LADDER_MBPS,
};
use crate::qoe::{qoe_lin, LinWeights};

/// Content with per-chunk complexity: sizes scale with the ladder rate and
/// a chunk factor; VMAF saturates with rate faster on easy chunks.
pub fn synthetic_manifest(
    num_chunks: usize,
    chunk_duration: f64,
    ladder: &[f64],
    seed: u64,
) -> Result<VideoManifest, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chunks = (0..num_chunks)
        .map(|_| {
            let size_factor: f64 = rng.random_range(0.75..1.25);
            let difficulty: f64 = rng.random_range(0.6..1.6);
            ChunkEncoding {
                sizes_bytes: ladder
                    .iter()
                    .map(|r| (r * 1e6 / 8.0 * chunk_duration * size_factor).round().max(1.0) as u64)
                    .collect(),
                vmaf: ladder
                    .iter()
                    .map(|r| {
                        let v = 100.0 * (1.0 - (-1.3 * r / difficulty).exp());
                        (v * 1e3).round() / 1e3
                    })
                    .collect(),
            }
        })
        .collect();
    VideoManifest::new(chunk_duration, ladder.to_vec(), chunks)
}

/// The default 48-chunk, 4 s, six-level content.
pub fn default_manifest(seed: u64) -> VideoManifest {
    synthetic_manifest(48, 4.0, &DEFAULT_LADDER_MBPS, seed).expect("valid synthetic manifest")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    /// Markov-modulated bandwidth around a mean drawn per trace.
    Markov,
    /// Fast start that collapses to a slow link.
    Cliff,
}

/// One-second samples for `duration` seconds.
///
/// `Markov` traces hold a level for a random number of seconds, then jump to
/// a new level drawn around the trace's mean in `[mean_lo, mean_hi)`;
/// each sample adds multiplicative noise.
pub fn synthetic_trace(
    id: &str,
    kind: TraceKind,
    duration: usize,
    mean_range: (f64, f64),
    seed: u64,
) -> NetworkTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = duration.max(2);
    let mbps: Vec<f64> = match kind {
        TraceKind::Markov => {
            let mean = rng.random_range(mean_range.0..mean_range.1);
            let mut level = mean;
            let mut hold = 0;
            (0..n)
                .map(|_| {
                    if hold == 0 {
                        level = mean * rng.random_range(0.35..1.65);
                        hold = rng.random_range(2..12);
                    }
                    hold -= 1;
                    (level * rng.random_range(0.85..1.15)).max(0.05)
                })
                .collect()
        }
        TraceKind::Cliff => {
            let high = rng.random_range(mean_range.1..mean_range.1 * 1.5);
            let low = rng.random_range(0.2..0.45);
            let drop_at = rng.random_range(6..12);
            (0..n)
                .map(|t| if t < drop_at { high } else { low } * rng.random_range(0.95..1.05))
                .collect()
        }
    };
    let rounded: Vec<f64> = mbps.iter().map(|v| (v * 1e4).round() / 1e4).collect();
    NetworkTrace::from_uniform(id, 1.0, &rounded).expect("positive increasing samples")
}

/// A pool of Markov traces with means spread over slow and fast links.
pub fn trace_pool(prefix: &str, count: usize, duration: usize, seed: u64) -> Vec<NetworkTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let range = if i % 2 == 0 { (0.6, 1.8) } else { (1.8, 4.5) };
            synthetic_trace(&format!("{prefix}{i:03}"), TraceKind::Markov, duration, range, rng.random())
        })
        .collect()
}

/// Traces whose bandwidth collapses within the first few chunks.
pub fn cliff_pool(prefix: &str, count: usize, duration: usize, seed: u64) -> Vec<NetworkTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| synthetic_trace(&format!("{prefix}{i:03}"), TraceKind::Cliff, duration, (4.0, 6.0), rng.random()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaterPanelConfig {
    pub queries: usize,
    pub sessions_per_query: usize,
    pub users: usize,
    /// Probability that a user scores a given session of a query.
    pub rate_fraction: f64,
    pub chunks: usize,
    /// Shared latent QoE every user's scores are a monotone transform of.
    pub latent: LinWeights,
    pub seed: u64,
}

impl Default for RaterPanelConfig {
    fn default() -> Self {
        Self {
            queries: 60,
            sessions_per_query: 24,
            users: 32,
            rate_fraction: 0.5,
            chunks: 7,
            latent: LinWeights::new(1.0, 4.0, 1.0, 2.0),
            seed: 0,
        }
    }
}

/// Per-user strictly increasing map from latent QoE to a 0–100 score.
#[derive(Debug, Clone, Copy)]
struct UserScale {
    center: f64,
    spread: f64,
    gamma: f64,
}

impl UserScale {
    fn draw(rng: &mut impl Rng, center: (f64, f64), spread: (f64, f64)) -> Self {
        Self {
            center: rng.random_range(center.0..center.1),
            spread: rng.random_range(spread.0..spread.1),
            gamma: rng.random_range(0.5..2.0),
        }
    }

    fn score(&self, latent: f64) -> f64 {
        let s = 1.0 / (1.0 + (-(latent - self.center) / self.spread).exp());
        100.0 * s.powf(self.gamma)
    }
}

fn session_levels(rng: &mut impl Rng, chunks: usize, levels: usize) -> Vec<usize> {
    let top = levels - 1;
    let start = rng.random_range(0..levels);
    match rng.random_range(0..5) {
        0 => vec![start; chunks],
        1 => (0..chunks).map(|t| (start + t / 2).min(top)).collect(),
        2 => (0..chunks).map(|t| start.saturating_sub(t / 2)).collect(),
        3 => {
            let other = rng.random_range(0..levels);
            (0..chunks).map(|t| if t % 2 == 0 { start } else { other }).collect()
        }
        _ => {
            let mut l = start as i64;
            (0..chunks)
                .map(|_| {
                    l = (l + rng.random_range(-2..=2)).clamp(0, top as i64);
                    l as usize
                })
                .collect()
        }
    }
}

/// Sessions, scores and the latent value of every session.
pub struct RaterPanel {
    pub dataset: RatingDataset,
    pub latent: Vec<(String, f64)>,
}

/// Heterogeneous rater panel over a shared latent linear QoE.
///
/// Every query is one short video; its sessions mix steady, ramping,
/// oscillating and random-walk bitrate patterns with occasional stalls.
/// Each user maps the latent value through a private sigmoid-and-power
/// transform and scores a random subset of every query's sessions.
pub fn rater_panel(cfg: &RaterPanelConfig) -> Result<RaterPanel, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ladder = DEFAULT_LADDER_MBPS;
    let mut sessions = Vec::new();
    let mut latent = Vec::new();
    let mut per_query: Vec<Vec<(String, f64)>> = Vec::new();
    for q in 0..cfg.queries {
        let manifest = synthetic_manifest(cfg.chunks, 4.0, &ladder, rng.random())?;
        let mut these = Vec::new();
        for s in 0..cfg.sessions_per_query {
            let levels = session_levels(&mut rng, cfg.chunks, ladder.len());
            let mut rebuffer = vec![0.0; cfg.chunks];
            if rng.random_bool(0.5) {
                for _ in 0..rng.random_range(1..=3) {
                    let t = rng.random_range(0..cfg.chunks);
                    rebuffer[t] = ((rebuffer[t] + rng.random_range(0.5..6.0)) * 100.0f64).round() / 100.0;
                }
            }
            let rec = SessionRecord::new(
                format!("q{q:03}s{s:02}"),
                levels.iter().enumerate().map(|(t, &l)| manifest.vmaf(t, l)).collect(),
                levels.iter().map(|&l| ladder[l]).collect(),
                rebuffer,
            )?;
            let value = qoe_lin(&rec, &cfg.latent);
            these.push((rec.session_id.clone(), value));
            latent.push((rec.session_id.clone(), value));
            sessions.push(rec);
        }
        per_query.push(these);
    }
    let values: Vec<f64> = latent.iter().map(|l| l.1).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1.0);
    let users: Vec<UserScale> = (0..cfg.users)
        .map(|_| {
            UserScale::draw(
                &mut rng,
                (lo + 0.3 * span, lo + 0.7 * span),
                (0.05 * span, 0.3 * span),
            )
        })
        .collect();
    let mut rows = Vec::new();
    for (q, these) in per_query.iter().enumerate() {
        for (u, scale) in users.iter().enumerate() {
            let mut picked: Vec<&(String, f64)> =
                these.iter().filter(|_| rng.random_bool(cfg.rate_fraction)).collect();
            if picked.len() < 2 {
                let mut all: Vec<&(String, f64)> = these.iter().collect();
                all.shuffle(&mut rng);
                picked = all.into_iter().take(2).collect();
            }
            for (sid, value) in picked {
                rows.push(ScoreRow {
                    query_id: format!("q{q:03}"),
                    session_id: sid.clone(),
                    user_id: format!("u{u:02}"),
                    score: scale.score(*value),
                });
            }
        }
    }
    Ok(RaterPanel {
        dataset: RatingDataset::new(sessions, rows)?,
        latent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_is_valid_and_deterministic() {
        let a = default_manifest(3);
        assert_eq!(a.num_chunks(), 48);
        assert_eq!(a.num_levels(), 6);
        assert_eq!(a, default_manifest(3));
    }

    #[test]
    fn traces_are_valid() {
        for t in trace_pool("t", 6, 300, 1).iter().chain(cliff_pool("c", 3, 300, 2).iter()) {
            assert_eq!(t.len(), 300);
            assert!(t.samples().iter().all(|s| s.mbps > 0.0));
        }
    }

    #[test]
    fn small_panel() {
        let cfg = RaterPanelConfig {
            queries: 2,
            sessions_per_query: 5,
            users: 3,
            ..RaterPanelConfig::default()
        };
        let p = rater_panel(&cfg).unwrap();
        let c = p.dataset.counts();
        assert_eq!((c.queries, c.sessions, c.users), (2, 10, 3));
        assert!(p.dataset.score_entries().all(|(_, _, y)| (0.0..=100.0).contains(&y)));
    }
}
