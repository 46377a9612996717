//! Two-column bandwidth traces (`<t_seconds> <mbps>` per line).
//!
//! Each sample's bandwidth holds from its timestamp until the next one. The
//! final sample holds for the same interval as the one before it, so a trace
//! of `n` samples spans `t[n-1] + (t[n-1] - t[n-2]) - t[0]` seconds.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub time: f64,
    pub mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTrace {
    id: String,
    samples: Vec<TraceSample>,
}

impl NetworkTrace {
    pub fn new(id: impl Into<String>, samples: Vec<TraceSample>) -> Result<Self, DataError> {
        if samples.len() < 2 {
            return Err(DataError::TooFewSamples(samples.len()));
        }
        for (i, s) in samples.iter().enumerate() {
            let line = i + 1;
            if !s.time.is_finite() || !s.mbps.is_finite() {
                return Err(DataError::MalformedLine {
                    line,
                    reason: "non-finite value".into(),
                });
            }
            if i == 0 && s.time < 0.0 {
                return Err(DataError::NonMonotonicTimestamp { line });
            }
            if i > 0 && s.time <= samples[i - 1].time {
                return Err(DataError::NonMonotonicTimestamp { line });
            }
            if s.mbps <= 0.0 {
                return Err(DataError::NonPositiveBandwidth { line });
            }
        }
        Ok(Self {
            id: id.into(),
            samples,
        })
    }

    /// Builds a trace from evenly spaced bandwidth values starting at t = 0.
    pub fn from_uniform(
        id: impl Into<String>,
        interval: f64,
        mbps: &[f64],
    ) -> Result<Self, DataError> {
        let samples = mbps
            .iter()
            .enumerate()
            .map(|(i, &m)| TraceSample {
                time: i as f64 * interval,
                mbps: m,
            })
            .collect();
        Self::new(id, samples)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn samples(&self) -> &[TraceSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration that sample `i` stays in effect.
    pub fn segment_duration(&self, i: usize) -> f64 {
        let n = self.samples.len();
        if i + 1 < n {
            self.samples[i + 1].time - self.samples[i].time
        } else {
            self.samples[n - 1].time - self.samples[n - 2].time
        }
    }

    pub fn span(&self) -> f64 {
        let n = self.samples.len();
        self.samples[n - 1].time + self.segment_duration(n - 1) - self.samples[0].time
    }

    /// Time-weighted mean bandwidth over the whole span.
    pub fn mean_mbps(&self) -> f64 {
        let total: f64 = (0..self.samples.len())
            .map(|i| self.samples[i].mbps * self.segment_duration(i))
            .sum();
        total / self.span()
    }

    pub fn parse(id: impl Into<String>, text: &str) -> Result<Self, DataError> {
        let mut samples = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(DataError::MalformedLine {
                    line,
                    reason: format!("expected 2 fields, found {}", fields.len()),
                });
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| DataError::MalformedLine {
                        line,
                        reason: format!("not a finite number: {s:?}"),
                    })
            };
            let time = parse(fields[0])?;
            let mbps = parse(fields[1])?;
            if time < 0.0 || samples.last().is_some_and(|p: &TraceSample| time <= p.time) {
                return Err(DataError::NonMonotonicTimestamp { line });
            }
            if mbps <= 0.0 {
                return Err(DataError::NonPositiveBandwidth { line });
            }
            samples.push(TraceSample { time, mbps });
        }
        if samples.len() < 2 {
            return Err(DataError::TooFewSamples(samples.len()));
        }
        Self::new(id, samples)
    }

    /// Canonical text form; `parse(to_text(x)) == x` exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 16);
        for s in &self.samples {
            let _ = writeln!(out, "{} {}", s.time, s.mbps);
        }
        out
    }

    /// Converts a Mahimahi packet-delivery log into a cooked trace.
    ///
    /// Every line of a Mahimahi trace is a millisecond timestamp at which one
    /// MTU-sized (1500 byte) packet may be delivered. Deliveries are counted
    /// in `bin_ms` buckets; empty buckets are floored at `min_mbps` so the
    /// result satisfies the positive-bandwidth invariant.
    pub fn from_mahimahi(
        id: impl Into<String>,
        text: &str,
        bin_ms: u64,
        min_mbps: f64,
    ) -> Result<Self, DataError> {
        const PACKET_BITS: f64 = 1500.0 * 8.0;
        let mut stamps = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let content = raw.trim();
            if content.is_empty() {
                continue;
            }
            let ms: u64 = content.parse().map_err(|_| DataError::MalformedLine {
                line: idx + 1,
                reason: format!("expected integer milliseconds, found {content:?}"),
            })?;
            stamps.push(ms);
        }
        if bin_ms == 0 {
            return Err(DataError::Schema("bin width must be positive".into()));
        }
        let last = stamps.iter().copied().max().ok_or(DataError::TooFewSamples(0))?;
        let bins = (last / bin_ms + 1) as usize;
        let mut counts = vec![0u64; bins.max(2)];
        for ms in stamps {
            counts[(ms / bin_ms) as usize] += 1;
        }
        let secs = bin_ms as f64 / 1000.0;
        let mbps: Vec<f64> = counts
            .iter()
            .map(|&c| (c as f64 * PACKET_BITS / secs / 1e6).max(min_mbps))
            .collect();
        Self::from_uniform(id, secs, &mbps)
    }
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<NetworkTrace, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    NetworkTrace::parse(id, &text)
}

pub fn save_trace(trace: &NetworkTrace, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    std::fs::write(path, trace.to_text()).map_err(|e| DataError::io(path, e))
}

/// Loads every regular file in `dir` as a trace, sorted by file name.
pub fn load_trace_dir(dir: impl AsRef<Path>) -> Result<Vec<NetworkTrace>, DataError> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| DataError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(DataError::Schema(format!(
            "no trace files in {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            load_trace(p).map_err(|e| DataError::InFile {
                path: p.display().to_string(),
                source: Box::new(e),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_samples() {
        let t = NetworkTrace::parse("a", "0 1.0\n1 2.0").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.samples()[0].mbps, 1.0);
        assert_eq!(t.samples()[1].mbps, 2.0);
        assert_eq!(t.span(), 2.0);
    }

    #[test]
    fn repeated_timestamp_is_reported_with_line() {
        let err = NetworkTrace::parse("a", "0 1.0\n0 2.0").unwrap_err();
        assert!(matches!(err, DataError::NonMonotonicTimestamp { line: 2 }));
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let t = NetworkTrace::parse("a", "# header\n\n0 1.0 # first\n0.5 3\n").unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn bad_lines() {
        assert!(matches!(
            NetworkTrace::parse("a", "0 1.0\n1 x"),
            Err(DataError::MalformedLine { line: 2, .. })
        ));
        assert!(matches!(
            NetworkTrace::parse("a", "0 1.0\n1 2 3"),
            Err(DataError::MalformedLine { line: 2, .. })
        ));
        assert!(matches!(
            NetworkTrace::parse("a", "0 1.0\n1 0"),
            Err(DataError::NonPositiveBandwidth { line: 2 })
        ));
        assert!(matches!(
            NetworkTrace::parse("a", "-1 1.0\n1 2"),
            Err(DataError::NonMonotonicTimestamp { line: 1 })
        ));
        assert!(matches!(
            NetworkTrace::parse("a", "0 1.0"),
            Err(DataError::TooFewSamples(1))
        ));
    }

    #[test]
    fn mahimahi_bins_packets() {
        // 1000 packets inside the first second -> 12 Mbps; nothing in the second.
        let mut text = String::new();
        for i in 0..1000 {
            text.push_str(&format!("{}\n", i));
        }
        text.push_str("1500\n");
        let t = NetworkTrace::from_mahimahi("m", &text, 1000, 0.01).unwrap();
        assert_eq!(t.len(), 2);
        assert!((t.samples()[0].mbps - 12.0).abs() < 1e-12);
        assert!((t.samples()[1].mbps - 0.012).abs() < 1e-12);
    }

    #[test]
    fn mean_is_time_weighted() {
        let t = NetworkTrace::new(
            "a",
            vec![
                TraceSample { time: 0.0, mbps: 1.0 },
                TraceSample { time: 3.0, mbps: 4.0 },
            ],
        )
        .unwrap();
        // 1 Mbps for 3 s, 4 Mbps for 3 s.
        assert!((t.mean_mbps() - 2.5).abs() < 1e-12);
    }
}
