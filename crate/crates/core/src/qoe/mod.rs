//! Rank-based QoE: relative labels, the linear QoE formula, window features
//! for the neural scorer, pairwise training and Identity Rate evaluation.

mod pairs;
mod train;

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::data::{DataError, SessionRecord};
use crate::nn::NetError;

pub use pairs::{
    enumerate_pairs, identity_rate, pair_loss, sample_batch, PairLoss, PairSample, TIE_TOLERANCE,
};
pub use train::{
    lin_identity_rate, mos_baseline, scorer_identity_rate, session_features,
    train_mos_regression, train_qoe_dnn, train_qoe_lin, CurveRow, LinModel, MosTable, QoeScorer,
    QoeTrainConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum QoeError {
    #[error("no query has a user with two or more scored sessions")]
    InsufficientSessions,
    #[error("identity rate needs at least one test pair")]
    EmptyTestSet,
    #[error("session {0:?} is not in the score table")]
    UnknownSession(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite parameter after epoch {0}")]
    Diverged(usize),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Number of trailing chunks the neural scorer sees.
pub const QOE_WINDOW: usize = 7;
/// Rebuffer time at which the rebuffer feature saturates.
pub const REBUFFER_CLAMP_S: f64 = 10.0;
/// Width of one feature vector: vmaf, bitrate and rebuffer lanes.
pub const QOE_FEATURES: usize = 3 * QOE_WINDOW;

/// Ordering of two opinion scores from the same user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelLabel {
    Worse,
    Tie,
    Better,
}

impl RelLabel {
    pub fn from_scores(y_i: f64, y_j: f64) -> Self {
        if y_i > y_j {
            RelLabel::Better
        } else if y_i < y_j {
            RelLabel::Worse
        } else {
            RelLabel::Tie
        }
    }

    pub fn value(self) -> f64 {
        match self {
            RelLabel::Worse => -1.0,
            RelLabel::Tie => 0.0,
            RelLabel::Better => 1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            RelLabel::Worse => RelLabel::Better,
            RelLabel::Tie => RelLabel::Tie,
            RelLabel::Better => RelLabel::Worse,
        }
    }
}

pub fn rel_label(y_i: f64, y_j: f64) -> RelLabel {
    RelLabel::from_scores(y_i, y_j)
}

/// Coefficients of the linear QoE formula
/// `α Σq − β ΣT − γ Σ[Δq]+ − δ Σ[Δq]−`, stored exactly as configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinWeights {
    #[serde(rename = "alpha_v")]
    pub quality: f64,
    #[serde(rename = "beta_v")]
    pub rebuffer: f64,
    #[serde(rename = "gamma_v")]
    pub switch_up: f64,
    #[serde(rename = "delta_v")]
    pub switch_down: f64,
}

impl LinWeights {
    pub const fn new(quality: f64, rebuffer: f64, switch_up: f64, switch_down: f64) -> Self {
        Self {
            quality,
            rebuffer,
            switch_up,
            switch_down,
        }
    }

    /// The published evaluation weights.
    pub const REFERENCE: LinWeights = LinWeights::new(0.535, -0.215, 0.13, 1.37);

    pub fn is_finite(&self) -> bool {
        [self.quality, self.rebuffer, self.switch_up, self.switch_down]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Value of one chunk given its quality, stall and quality change.
    pub fn chunk_score(&self, vmaf: f64, rebuffer: f64, vmaf_change: f64) -> f64 {
        self.quality * vmaf
            - self.rebuffer * rebuffer
            - self.switch_up * vmaf_change.max(0.0)
            - self.switch_down * (-vmaf_change).max(0.0)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("weights serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let w: Self = serde_json::from_str(text).map_err(|e| DataError::Schema(e.to_string()))?;
        if !w.is_finite() {
            return Err(DataError::Range("non-finite QoE weight".into()));
        }
        Ok(w)
    }
}

impl Add for LinWeights {
    type Output = LinWeights;

    fn add(self, o: LinWeights) -> LinWeights {
        LinWeights::new(
            self.quality + o.quality,
            self.rebuffer + o.rebuffer,
            self.switch_up + o.switch_up,
            self.switch_down + o.switch_down,
        )
    }
}

/// Session totals the linear formula is built from.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinAggregates {
    pub quality: f64,
    pub rebuffer: f64,
    pub switch_up: f64,
    pub switch_down: f64,
}

impl LinAggregates {
    pub fn of(session: &SessionRecord) -> Self {
        let mut a = LinAggregates::default();
        for t in 0..session.len() {
            a.quality += session.vmaf[t];
            a.rebuffer += session.rebuffer[t];
            if t > 0 {
                let d = session.vmaf[t] - session.vmaf[t - 1];
                a.switch_up += d.max(0.0);
                a.switch_down += (-d).max(0.0);
            }
        }
        a
    }

    pub fn score(&self, w: &LinWeights) -> f64 {
        w.quality * self.quality
            - w.rebuffer * self.rebuffer
            - w.switch_up * self.switch_up
            - w.switch_down * self.switch_down
    }
}

pub fn qoe_lin(session: &SessionRecord, w: &LinWeights) -> f64 {
    LinAggregates::of(session).score(w)
}

/// Normalized trailing-window input for the neural scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct QoeFeatures(pub [f64; QOE_FEATURES]);

impl QoeFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn vmaf_lane(&self) -> &[f64] {
        &self.0[..QOE_WINDOW]
    }

    pub fn bitrate_lane(&self) -> &[f64] {
        &self.0[QOE_WINDOW..2 * QOE_WINDOW]
    }

    pub fn rebuffer_lane(&self) -> &[f64] {
        &self.0[2 * QOE_WINDOW..]
    }
}

/// Window of `QOE_WINDOW` chunks ending at `end` over parallel per-chunk
/// arrays. Positions before the first chunk repeat the first chunk's quality
/// and bitrate with no rebuffering.
pub fn window_features(
    vmaf: &[f64],
    bitrate: &[f64],
    rebuffer: &[f64],
    end: usize,
    max_bitrate: f64,
) -> QoeFeatures {
    let mut f = [0.0; QOE_FEATURES];
    for slot in 0..QOE_WINDOW {
        let back = QOE_WINDOW - 1 - slot;
        let (q, r, stall) = match end.checked_sub(back) {
            Some(t) => (vmaf[t], bitrate[t], rebuffer[t]),
            None => (vmaf[0], bitrate[0], 0.0),
        };
        f[slot] = (q / 100.0).clamp(0.0, 1.0);
        f[QOE_WINDOW + slot] = (r / max_bitrate).clamp(0.0, 1.0);
        f[2 * QOE_WINDOW + slot] = stall.min(REBUFFER_CLAMP_S) / REBUFFER_CLAMP_S;
    }
    QoeFeatures(f)
}

pub fn extract_features(session: &SessionRecord, end_chunk: usize, max_bitrate: f64) -> QoeFeatures {
    window_features(
        &session.vmaf,
        &session.bitrate,
        &session.rebuffer,
        end_chunk,
        max_bitrate,
    )
}
