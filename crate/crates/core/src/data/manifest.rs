use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

/// Per-chunk encodings along the bitrate ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkEncoding {
    pub sizes_bytes: Vec<u64>,
    pub vmaf: Vec<f64>,
}

/// Video content seen by the simulator: chunk sizes and VMAF for every
/// (chunk, bitrate level) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoManifest {
    chunk_duration_s: f64,
    ladder_mbps: Vec<f64>,
    chunks: Vec<ChunkEncoding>,
}

impl VideoManifest {
    pub fn new(
        chunk_duration_s: f64,
        ladder_mbps: Vec<f64>,
        chunks: Vec<ChunkEncoding>,
    ) -> Result<Self, DataError> {
        let m = Self {
            chunk_duration_s,
            ladder_mbps,
            chunks,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<(), DataError> {
        if !(self.chunk_duration_s.is_finite() && self.chunk_duration_s > 0.0) {
            return Err(DataError::Range("chunk_duration_s must be positive".into()));
        }
        let levels = self.ladder_mbps.len();
        if levels < 2 {
            return Err(DataError::Schema(format!(
                "ladder needs at least 2 levels, found {levels}"
            )));
        }
        if self.chunks.is_empty() {
            return Err(DataError::Schema("manifest has no chunks".into()));
        }
        if self.ladder_mbps.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(DataError::Range("ladder rates must be positive".into()));
        }
        if let Some(i) = self.ladder_mbps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(DataError::MonotonicityViolation {
                chunk: None,
                level: i + 1,
                what: "ladder_mbps",
            });
        }
        for (c, chunk) in self.chunks.iter().enumerate() {
            if chunk.sizes_bytes.len() != levels || chunk.vmaf.len() != levels {
                return Err(DataError::Schema(format!(
                    "chunk {c}: expected {levels} sizes and vmaf values"
                )));
            }
            if chunk.sizes_bytes.iter().any(|&s| s == 0) {
                return Err(DataError::Range(format!("chunk {c}: zero size")));
            }
            if let Some(l) = chunk
                .vmaf
                .iter()
                .position(|v| !(v.is_finite() && (0.0..=100.0).contains(v)))
            {
                return Err(DataError::Range(format!(
                    "chunk {c} level {l}: vmaf {} outside [0, 100]",
                    chunk.vmaf[l]
                )));
            }
            if let Some(l) = chunk.sizes_bytes.windows(2).position(|w| w[1] < w[0]) {
                return Err(DataError::MonotonicityViolation {
                    chunk: Some(c),
                    level: l + 1,
                    what: "sizes_bytes",
                });
            }
            if let Some(l) = chunk.vmaf.windows(2).position(|w| w[1] < w[0]) {
                return Err(DataError::MonotonicityViolation {
                    chunk: Some(c),
                    level: l + 1,
                    what: "vmaf",
                });
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let m: Self = serde_json::from_str(text).map_err(|e| DataError::Schema(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Canonical serialization: compact JSON followed by a newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn chunk_duration(&self) -> f64 {
        self.chunk_duration_s
    }

    pub fn ladder(&self) -> &[f64] {
        &self.ladder_mbps
    }

    pub fn max_bitrate(&self) -> f64 {
        *self.ladder_mbps.last().expect("validated ladder")
    }

    pub fn num_levels(&self) -> usize {
        self.ladder_mbps.len()
    }

    pub fn num_chunks(&self) -> usize {
        self.chunks.len()
    }

    pub fn chunks(&self) -> &[ChunkEncoding] {
        &self.chunks
    }

    pub fn size(&self, chunk: usize, level: usize) -> u64 {
        self.chunks[chunk].sizes_bytes[level]
    }

    pub fn vmaf(&self, chunk: usize, level: usize) -> f64 {
        self.chunks[chunk].vmaf[level]
    }

    /// Largest chunk size in the manifest, used to normalize observations.
    pub fn max_size(&self) -> u64 {
        self.chunks
            .iter()
            .filter_map(|c| c.sizes_bytes.last().copied())
            .max()
            .unwrap_or(1)
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<VideoManifest, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    VideoManifest::from_json(&text)
}

pub fn save_manifest(m: &VideoManifest, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    std::fs::write(path, m.to_json()).map_err(|e| DataError::io(path, e))
}
