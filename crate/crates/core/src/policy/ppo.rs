use serde::{Deserialize, Serialize};

use super::{advantage, dual_clip_loss, policy_entropy, update_lambda, PolicyError, PpoConfig};
use crate::nn::{AdamConfig, Gradients, Mlp};

/// One decision of a rollout, with everything the learner needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    /// Probability of `action` under the behavior policy.
    pub prob: f64,
    /// Blended reward; filled in by the learner.
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    /// Entropy of the behavior distribution, nats.
    pub entropy: f64,
    /// Unstandardized per-chunk linear QoE.
    pub raw_lin: f64,
    /// Unstandardized neural QoE of the trailing window.
    pub raw_dnn: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PpoStats {
    pub mean_advantage: f64,
    /// Mean surrogate objective (with entropy bonus) in the last pass.
    pub objective: f64,
    /// Mean squared critic error in the first pass.
    pub value_loss: f64,
    /// Mean behavior entropy of the batch, nats.
    pub behavior_entropy: f64,
    pub lambda: f64,
}

/// Runs `n_policy` passes of actor and critic updates on one batch, then
/// moves the entropy weight toward the target entropy.
///
/// Advantages and critic targets are computed once, with the critic as it
/// was before the update.
pub fn ppo_update(
    batch: &[Transition],
    actor: &mut Mlp,
    critic: &mut Mlp,
    cfg: &PpoConfig,
    lambda: &mut f64,
) -> Result<PpoStats, PolicyError> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(PolicyError::EmptyTrajectory);
    }
    let n = batch.len() as f64;
    let mut targets = Vec::with_capacity(batch.len());
    let mut advs = Vec::with_capacity(batch.len());
    for t in batch {
        let v = critic.predict(&t.obs)?[0];
        let v_next = if t.done { 0.0 } else { critic.predict(&t.next_obs)?[0] };
        let a = advantage(t.reward, v, v_next, t.done, cfg.gamma);
        advs.push(a);
        targets.push(a + v);
    }
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let mut objective = 0.0;
    let mut value_loss = 0.0;
    for pass in 0..cfg.n_policy {
        let mut g_actor = Gradients::zeros(actor.spec());
        let mut g_critic = Gradients::zeros(critic.spec());
        let mut obj_sum = 0.0;
        let mut v_sum = 0.0;
        for (k, t) in batch.iter().enumerate() {
            let cache = actor.forward(&t.obs)?;
            let p = cache.output();
            let ratio = p[t.action] / t.prob;
            let clip = dual_clip_loss(ratio, advs[k], cfg.epsilon, cfg.dual_clip)?;
            let h = policy_entropy(p);
            obj_sum += clip.value + *lambda * h;
            // Gradient of −(L + λH) with respect to the probabilities.
            let mut grad: Vec<f64> = p
                .iter()
                .map(|&pk| *lambda * (pk.max(f64::MIN_POSITIVE).ln() + 1.0))
                .collect();
            grad[t.action] -= clip.d_ratio / t.prob;
            actor.backward_into(&cache, &grad, &mut g_actor)?;

            let vc = critic.forward(&t.obs)?;
            let err = vc.output()[0] - targets[k];
            v_sum += err * err;
            critic.backward_into(&vc, &[2.0 * err], &mut g_critic)?;
        }
        g_actor.scale(1.0 / n);
        g_critic.scale(1.0 / n);
        actor.adam_step(&g_actor, &adam)?;
        critic.adam_step(&g_critic, &adam)?;
        if pass == 0 {
            value_loss = v_sum / n;
        }
        objective = obj_sum / n;
    }
    let behavior_entropy = batch.iter().map(|t| t.entropy).sum::<f64>() / n;
    *lambda = update_lambda(*lambda, behavior_entropy, cfg.h_target, cfg.lambda_lr);
    Ok(PpoStats {
        mean_advantage: advs.iter().sum::<f64>() / n,
        objective,
        value_loss,
        behavior_entropy,
        lambda: *lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{MlpSpec, OutputHead};

    fn nets() -> (Mlp, Mlp) {
        let actor = Mlp::init(MlpSpec::new(1, &[8], 2, OutputHead::Softmax), 3).unwrap();
        let critic = Mlp::init(MlpSpec::new(1, &[8], 1, OutputHead::Linear), 4).unwrap();
        (actor, critic)
    }

    fn bandit_batch(actor: &Mlp) -> Vec<Transition> {
        let p = actor.predict(&[1.0]).unwrap();
        (0..2)
            .map(|a| Transition {
                obs: vec![1.0],
                action: a,
                prob: p[a],
                reward: if a == 0 { 1.0 } else { 0.0 },
                next_obs: vec![1.0],
                done: true,
                entropy: policy_entropy(&p),
                raw_lin: 0.0,
                raw_dnn: 0.0,
            })
            .collect()
    }

    #[test]
    fn bandit_favored_action_rises_every_update() {
        let (mut actor, mut critic) = nets();
        let cfg = PpoConfig {
            learning_rate: 1e-3,
            lambda_lr: 0.0,
            ..PpoConfig::default()
        };
        let mut lambda = 0.0;
        let mut last = actor.predict(&[1.0]).unwrap()[0];
        for _ in 0..100 {
            let batch = bandit_batch(&actor);
            ppo_update(&batch, &mut actor, &mut critic, &cfg, &mut lambda).unwrap();
            let p = actor.predict(&[1.0]).unwrap()[0];
            assert!(p > last, "{p} <= {last}");
            last = p;
        }
        assert!(last > 0.8, "{last}");
    }

    #[test]
    fn zero_advantage_leaves_actor_unchanged() {
        let (mut actor, mut critic) = nets();
        let v = critic.predict(&[1.0]).unwrap()[0];
        let mut batch = bandit_batch(&actor);
        for t in &mut batch {
            t.reward = v;
        }
        let before = actor.clone();
        let cfg = PpoConfig {
            n_policy: 1,
            ..PpoConfig::default()
        };
        let mut lambda = 0.0;
        ppo_update(&batch, &mut actor, &mut critic, &cfg, &mut lambda).unwrap();
        assert_eq!(actor.flat_params(), before.flat_params());
    }

    #[test]
    fn identical_snapshots_give_identical_updates() {
        let run = || {
            let (mut actor, mut critic) = nets();
            let batch = bandit_batch(&actor);
            let mut lambda = 0.3;
            let stats = ppo_update(&batch, &mut actor, &mut critic, &PpoConfig::default(), &mut lambda).unwrap();
            (actor.flat_params(), critic.flat_params(), stats.lambda)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_batch_is_rejected() {
        let (mut actor, mut critic) = nets();
        let mut lambda = 0.0;
        assert!(matches!(
            ppo_update(&[], &mut actor, &mut critic, &PpoConfig::default(), &mut lambda),
            Err(PolicyError::EmptyTrajectory)
        ));
    }
}
