//! Independent actor-critic learners for the agents.
//!
//! Each agent owns its actor and critic. Steps where the mediator played
//! for the agent (status `Committed`) are off-policy and skipped; a commit
//! decision with `k > 1` is trained on the k-step temporal difference.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{masked_policy, policy_loss_grad, Adam, BatchEval, EntropySchedule, MlpParams};
use crate::error::{Error, Result};
use crate::game::Observation;
use crate::mediation::Status;
use crate::rollout::{Episode, Protocol};

/// Learning rates, width and entropy schedule of one learner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub hidden: usize,
    pub entropy: EntropySchedule,
}

#[derive(Clone, Debug)]
pub struct AgentLearner {
    pub index: usize,
    pub actor: MlpParams,
    pub critic: MlpParams,
    actor_opt: Adam,
    critic_opt: Adam,
    pub entropy: EntropySchedule,
    pub gamma: f64,
}

/// Bootstrap segment of a commit decision spanning a whole window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowReturn {
    /// `sum_{l<len} gamma^l r_{t+l}`.
    pub discounted_reward: f64,
    pub len: usize,
    /// Observation right after the window, `None` at episode end.
    pub obs_after: Option<Observation>,
}

/// One trainable experience of one agent.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentStepRecord {
    pub obs: Observation,
    pub action: usize,
    pub committed: bool,
    pub mask: Vec<bool>,
    pub reward: f64,
    pub next_obs: Option<Observation>,
    /// Present exactly when the agent committed with `k > 1`.
    pub window: Option<WindowReturn>,
}

impl AgentStepRecord {
    /// Reward part of the TD target, the bootstrap observation and its
    /// discount.
    pub fn target_parts(&self, gamma: f64) -> (f64, Option<&Observation>, f64) {
        match &self.window {
            Some(w) => (w.discounted_reward, w.obs_after.as_ref(), gamma.powi(w.len as i32)),
            None => (self.reward, self.next_obs.as_ref(), gamma),
        }
    }
}

/// Indices of the steps agent `agent` is trained on: those where it chose
/// its own action.
pub fn filter_trainable_steps(episode: &Episode, agent: usize) -> Vec<usize> {
    episode
        .steps
        .iter()
        .enumerate()
        .filter(|(_, s)| s.status[agent] != Status::Committed)
        .map(|(t, _)| t)
        .collect()
}

/// Build agent `agent`'s training records from an episode.
pub fn agent_records(protocol: &Protocol, episode: &Episode, agent: usize, gamma: f64) -> Vec<AgentStepRecord> {
    let commit = protocol.commit_action(agent);
    let steps = &episode.steps;
    filter_trainable_steps(episode, agent)
        .into_iter()
        .map(|t| {
            let s = &steps[t];
            let committed = Some(s.choices[agent]) == commit;
            let window = (committed && episode.window > 1).then(|| {
                let end = episode.window_end(t);
                let discounted_reward = (t..end)
                    .map(|l| gamma.powi((l - t) as i32) * steps[l].rewards[agent])
                    .sum();
                WindowReturn {
                    discounted_reward,
                    len: end - t,
                    obs_after: steps.get(end).map(|n| n.obs[agent].clone()),
                }
            });
            AgentStepRecord {
                obs: s.obs[agent].clone(),
                action: s.choices[agent],
                committed,
                mask: protocol.agent_mask(agent, s.status[agent]),
                reward: s.rewards[agent],
                next_obs: steps.get(t + 1).map(|n| n.obs[agent].clone()),
                window,
            }
        })
        .collect()
}

/// Squared TD error of one record and its gradient for the critic.
/// The bootstrap value is held constant.
pub fn critic_loss(record: &AgentStepRecord, critic: &MlpParams, gamma: f64) -> Result<(f64, Vec<f64>)> {
    let (reward, boot, discount) = record.target_parts(gamma);
    let bootstrap = match boot {
        Some(o) => critic.forward(o)?[0],
        None => 0.0,
    };
    let value = critic.forward(&record.obs)?[0];
    let delta = reward + discount * bootstrap - value;
    let grads = critic.backward(&record.obs, &[-2.0 * delta])?;
    Ok((delta * delta, grads))
}

/// Policy-gradient loss of one record with the critic's TD residual as
/// advantage, plus the entropy bonus.
pub fn actor_loss(
    record: &AgentStepRecord,
    actor: &MlpParams,
    critic: &MlpParams,
    gamma: f64,
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    let (reward, boot, discount) = record.target_parts(gamma);
    let bootstrap = match boot {
        Some(o) => critic.forward(o)?[0],
        None => 0.0,
    };
    let advantage = reward + discount * bootstrap - critic.forward(&record.obs)?[0];
    let logits = actor.forward(&record.obs)?;
    let (loss, dlogits) = policy_loss_grad(&logits, &record.mask, record.action, advantage, beta)?;
    Ok((loss, actor.backward(&record.obs, &dlogits)?))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub samples: usize,
}

impl AgentLearner {
    pub fn new<R: Rng + ?Sized>(
        index: usize,
        obs_len: usize,
        num_actions: usize,
        config: &LearnerConfig,
        gamma: f64,
        rng: &mut R,
    ) -> Self {
        let actor = MlpParams::new(obs_len, config.hidden, num_actions, rng);
        let critic = MlpParams::new(obs_len, config.hidden, 1, rng);
        AgentLearner {
            index,
            actor_opt: Adam::new(actor.len(), config.lr_actor),
            critic_opt: Adam::new(critic.len(), config.lr_critic),
            actor,
            critic,
            entropy: config.entropy,
            gamma,
        }
    }

    pub fn policy(&self, obs: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
        masked_policy(&self.actor.forward(obs)?, mask)
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(obs)?[0])
    }

    /// One gradient step on the batch-mean actor and critic losses.
    pub fn update(&mut self, records: &[AgentStepRecord], beta: f64) -> Result<UpdateStats> {
        if records.is_empty() {
            return Ok(UpdateStats::default());
        }
        let scale = 1.0 / records.len() as f64;
        let mut critic_batch = BatchEval::new(&self.critic);
        let mut actor_batch = BatchEval::new(&self.actor);
        let mut stats = UpdateStats {
            samples: records.len(),
            ..Default::default()
        };
        for rec in records {
            let (reward, boot, discount) = rec.target_parts(self.gamma);
            let bootstrap = match boot {
                Some(o) => {
                    let id = critic_batch.eval(o);
                    critic_batch.output(id)[0]
                }
                None => 0.0,
            };
            let id = critic_batch.eval(&rec.obs);
            let delta = reward + discount * bootstrap - critic_batch.output(id)[0];
            critic_batch.accumulate_at(id, 0, -2.0 * delta * scale);
            stats.critic_loss += delta * delta * scale;

            let aid = actor_batch.eval(&rec.obs);
            let (loss, dlogits) = policy_loss_grad(actor_batch.output(aid), &rec.mask, rec.action, delta, beta)?;
            actor_batch.accumulate(aid, &dlogits, scale);
            stats.actor_loss += loss * scale;
        }
        if !(stats.actor_loss.is_finite() && stats.critic_loss.is_finite()) {
            return Err(Error::NonFinite(format!(
                "agent {} losses: actor {} critic {}",
                self.index, stats.actor_loss, stats.critic_loss
            )));
        }
        let critic_grad = critic_batch.gradient();
        let actor_grad = actor_batch.gradient();
        self.critic_opt.step(self.critic.as_mut_slice(), &critic_grad)?;
        self.actor_opt.step(self.actor.as_mut_slice(), &actor_grad)?;
        Ok(stats)
    }
}
