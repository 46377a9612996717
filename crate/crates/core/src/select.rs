//! Discounted-UCB choice of the next training trace.
//!
//! Rewards are the policy's normalized entropy on the trace, so traces the
//! policy is still unsure about get revisited while settled ones fade.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SelectError {
    #[error("selector pool is empty")]
    EmptyPool,
    #[error("unknown arm {0:?}")]
    UnknownArm(String),
    #[error("duplicate arm {0:?}")]
    DuplicateArm(String),
    #[error("invalid bandit config: {0}")]
    InvalidConfig(String),
    #[error("non-finite reward {0}")]
    NonFiniteReward(f64),
    #[error("selector state: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditConfig {
    pub gamma: f64,
    /// Exploration constant `B` of the confidence bonus.
    pub exploration: f64,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            gamma: 0.999,
            exploration: 0.2,
        }
    }
}

impl BanditConfig {
    pub fn validate(&self) -> Result<(), SelectError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(SelectError::InvalidConfig("gamma must be in (0, 1]".into()));
        }
        if !(self.exploration >= 0.0 && self.exploration.is_finite()) {
            return Err(SelectError::InvalidConfig("exploration must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub id: String,
    pub discounted_reward: f64,
    pub discounted_pulls: f64,
    pub pulls: u64,
}

impl ArmState {
    pub fn mean(&self) -> Option<f64> {
        (self.discounted_pulls > 0.0).then(|| self.discounted_reward / self.discounted_pulls)
    }
}

/// One selection decision, as appended to the selection log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub epoch: u64,
    pub arm: usize,
    pub trace_id: String,
    pub value: f64,
    pub mean: f64,
    pub bonus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountedUcb {
    cfg: BanditConfig,
    arms: Vec<ArmState>,
    /// Rewards recorded so far.
    records: u64,
}

impl DiscountedUcb {
    pub fn new<S: Into<String>>(
        ids: impl IntoIterator<Item = S>,
        cfg: BanditConfig,
    ) -> Result<Self, SelectError> {
        cfg.validate()?;
        let mut arms: Vec<ArmState> = Vec::new();
        for id in ids {
            let id = id.into();
            if arms.iter().any(|a| a.id == id) {
                return Err(SelectError::DuplicateArm(id));
            }
            arms.push(ArmState {
                id,
                discounted_reward: 0.0,
                discounted_pulls: 0.0,
                pulls: 0,
            });
        }
        if arms.is_empty() {
            return Err(SelectError::EmptyPool);
        }
        Ok(Self {
            cfg,
            arms,
            records: 0,
        })
    }

    pub fn config(&self) -> &BanditConfig {
        &self.cfg
    }

    pub fn arms(&self) -> &[ArmState] {
        &self.arms
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn arm_index(&self, id: &str) -> Result<usize, SelectError> {
        self.arms
            .iter()
            .position(|a| a.id == id)
            .ok_or_else(|| SelectError::UnknownArm(id.to_string()))
    }

    /// Decays every arm, then credits the pulled one.
    pub fn record_index(&mut self, arm: usize, reward: f64) -> Result<(), SelectError> {
        if arm >= self.arms.len() {
            return Err(SelectError::UnknownArm(arm.to_string()));
        }
        if !reward.is_finite() {
            return Err(SelectError::NonFiniteReward(reward));
        }
        for a in &mut self.arms {
            a.discounted_reward *= self.cfg.gamma;
            a.discounted_pulls *= self.cfg.gamma;
        }
        let a = &mut self.arms[arm];
        a.discounted_reward += reward;
        a.discounted_pulls += 1.0;
        a.pulls += 1;
        self.records += 1;
        Ok(())
    }

    pub fn record(&mut self, id: &str, reward: f64) -> Result<(), SelectError> {
        let i = self.arm_index(id)?;
        self.record_index(i, reward)
    }

    /// Exploration bonus of an arm at epoch `t` (counted from 1).
    pub fn bonus(&self, arm: usize, t: u64) -> f64 {
        let a = &self.arms[arm];
        if a.pulls == 0 {
            return f64::INFINITY;
        }
        (self.cfg.exploration * (t.max(1) as f64).ln() / a.pulls as f64).sqrt()
    }

    pub fn value(&self, arm: usize, t: u64) -> f64 {
        match self.arms[arm].mean() {
            None => f64::INFINITY,
            Some(m) => m + self.bonus(arm, t),
        }
    }

    /// Highest-value arm at epoch `t`; ties go to the fewest raw pulls, then
    /// the smallest id.
    pub fn select(&self, t: u64) -> Selection {
        let best = (0..self.arms.len())
            .min_by(|&i, &j| {
                let (vi, vj) = (self.value(i, t), self.value(j, t));
                vj.total_cmp(&vi)
                    .then(self.arms[i].pulls.cmp(&self.arms[j].pulls))
                    .then(self.arms[i].id.cmp(&self.arms[j].id))
            })
            .expect("pool is nonempty");
        Selection {
            epoch: t,
            arm: best,
            trace_id: self.arms[best].id.clone(),
            value: self.value(best, t),
            mean: self.arms[best].mean().unwrap_or(f64::NAN),
            bonus: self.bonus(best, t),
        }
    }

    /// Selection for the epoch after the last recorded one.
    pub fn select_next(&self) -> Selection {
        self.select(self.records + 1)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("selector serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, SelectError> {
        let s: Self = serde_json::from_str(text).map_err(|e| SelectError::Schema(e.to_string()))?;
        s.cfg.validate()?;
        if s.arms.is_empty() {
            return Err(SelectError::EmptyPool);
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(gamma: f64, exploration: f64) -> BanditConfig {
        BanditConfig { gamma, exploration }
    }

    #[test]
    fn single_record_mean() {
        let mut b = DiscountedUcb::new(["a"], BanditConfig::default()).unwrap();
        b.record("a", 0.8).unwrap();
        assert_eq!(b.arms()[0].mean(), Some(0.8));
    }

    #[test]
    fn undiscounted_average() {
        let mut b = DiscountedUcb::new(["a"], cfg(1.0, 0.2)).unwrap();
        b.record("a", 0.8).unwrap();
        b.record("a", 0.4).unwrap();
        assert!((b.arms()[0].mean().unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn discounted_average() {
        let mut b = DiscountedUcb::new(["a"], cfg(0.5, 0.2)).unwrap();
        b.record("a", 1.0).unwrap();
        b.record("a", 0.0).unwrap();
        assert!((b.arms()[0].mean().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn value_with_bonus() {
        let mut b = DiscountedUcb::new(["a", "b"], BanditConfig::default()).unwrap();
        b.record("a", 0.5).unwrap();
        let t = std::f64::consts::E;
        // ln t = 1 needs a real-valued epoch; check the formula directly.
        let v = b.arms()[0].mean().unwrap() + (0.2 * t.ln() / 1.0).sqrt();
        assert!((v - 0.9472).abs() < 1e-4);
        assert_eq!(b.value(1, 3), f64::INFINITY);
        assert_eq!(b.select(3).trace_id, "b");
    }

    #[test]
    fn zero_exploration_is_plain_mean() {
        let mut b = DiscountedUcb::new(["a"], cfg(0.9, 0.0)).unwrap();
        b.record("a", 0.3).unwrap();
        assert_eq!(b.value(0, 50), b.arms()[0].mean().unwrap());
    }

    #[test]
    fn ties_prefer_fewer_pulls_then_id() {
        let b = DiscountedUcb::new(["b", "a", "c"], BanditConfig::default()).unwrap();
        assert_eq!(b.select(1).trace_id, "a");
    }

    #[test]
    fn errors() {
        assert_eq!(
            DiscountedUcb::new(Vec::<String>::new(), BanditConfig::default()).unwrap_err(),
            SelectError::EmptyPool
        );
        let mut b = DiscountedUcb::new(["a"], BanditConfig::default()).unwrap();
        assert!(matches!(b.record("z", 0.1), Err(SelectError::UnknownArm(_))));
        assert!(DiscountedUcb::new(["a"], cfg(0.0, 0.2)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut b = DiscountedUcb::new(["a", "b"], BanditConfig::default()).unwrap();
        b.record("b", 0.25).unwrap();
        assert_eq!(DiscountedUcb::from_json(&b.to_json()).unwrap(), b);
    }
}
