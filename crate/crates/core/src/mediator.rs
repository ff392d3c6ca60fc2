//! The mediator learner.
//!
//! One actor network serves every coalition member: its input carries the
//! member's features, the coalition and the member's id, so the joint
//! policy is a product of per-agent heads. The critic sees everyone and
//! reports a value per agent for any coalition, which is what makes the
//! incentive-compatibility (IC) and encouragement (E) constraints
//! measurable.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::LearnerConfig;
use crate::approx::{masked_policy, policy_loss_grad, Adam, BatchEval, MlpParams};
use crate::error::{contract, Error, Result};
use crate::game::{Observation, PayoffSpec};
use crate::mediation::{Coalition, CoalitionEncoding, MediatorObservation};
use crate::rollout::{Episode, TrajectoryStep};

/// Which terms enter the mediator's policy objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Coalition welfare only.
    Naive,
    Ic,
    E,
    /// Both IC and E constraints.
    Constrained,
}

impl ObjectiveMode {
    pub fn uses_ic(self) -> bool {
        matches!(self, ObjectiveMode::Ic | ObjectiveMode::Constrained)
    }

    pub fn uses_e(self) -> bool {
        matches!(self, ObjectiveMode::E | ObjectiveMode::Constrained)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediatorConfig {
    pub learner: LearnerConfig,
    pub mode: ObjectiveMode,
    /// Share one policy across members and see the coalition only through
    /// its size.
    pub symmetric: bool,
    pub lambda_lr: f64,
    pub log_lambda_bounds: [f64; 2],
}

impl MediatorConfig {
    pub fn encoding(&self) -> CoalitionEncoding {
        if self.symmetric {
            CoalitionEncoding::Fraction
        } else {
            CoalitionEncoding::OneHot
        }
    }
}

/// Per-agent policy heads sharing one parameter set.
#[derive(Clone, Debug)]
pub struct MediatorActor {
    pub net: MlpParams,
    pub encoding: CoalitionEncoding,
    /// Environment actions of each agent; the commit action is never
    /// among them.
    pub actions: Vec<usize>,
}

impl MediatorActor {
    pub fn new<R: Rng + ?Sized>(spec: &PayoffSpec, encoding: CoalitionEncoding, hidden: usize, rng: &mut R) -> Self {
        let n = spec.num_agents;
        let id_len = match encoding {
            CoalitionEncoding::OneHot => n,
            CoalitionEncoding::Fraction => 0,
        };
        let input = spec.env_feature_len() + encoding.len(n) + id_len;
        MediatorActor {
            net: MlpParams::new(input, hidden, spec.max_actions(), rng),
            encoding,
            actions: (0..n).map(|i| spec.num_actions(i)).collect(),
        }
    }

    pub fn num_agents(&self) -> usize {
        self.actions.len()
    }

    pub fn input(&self, agent: usize, env_obs: &Observation, coalition: &Coalition) -> Vec<f64> {
        MediatorObservation::new(env_obs.clone(), coalition, agent, self.encoding).to_input()
    }

    /// Output slots beyond an agent's own action count are masked.
    pub fn mask(&self, agent: usize) -> Vec<bool> {
        (0..self.net.output_len()).map(|a| a < self.actions[agent]).collect()
    }

    /// Policy of head `agent`, over that agent's environment actions.
    pub fn probs(&self, agent: usize, env_obs: &Observation, coalition: &Coalition) -> Result<Vec<f64>> {
        if !coalition.contains(agent) {
            return Err(contract(format!(
                "mediator queried for agent {agent} outside the coalition"
            )));
        }
        let logits = self.net.forward(&self.input(agent, env_obs, coalition))?;
        let mut p = masked_policy(&logits, &self.mask(agent))?;
        p.truncate(self.actions[agent]);
        Ok(p)
    }
}

/// Coalition-conditioned critic reporting a value for every agent.
///
/// With the one-hot encoding the input is every agent's features plus the
/// coalition flags, and output `i` is agent `i`'s value. With the fraction
/// encoding the input is the mean features plus `|C| / N`, and the two
/// outputs are the value of a member and of an outsider.
#[derive(Clone, Debug)]
pub struct MediatorCritic {
    pub net: MlpParams,
    pub encoding: CoalitionEncoding,
    pub num_agents: usize,
}

impl MediatorCritic {
    pub fn new<R: Rng + ?Sized>(spec: &PayoffSpec, encoding: CoalitionEncoding, hidden: usize, rng: &mut R) -> Self {
        let n = spec.num_agents;
        let f = spec.env_feature_len();
        let (input, output) = match encoding {
            CoalitionEncoding::OneHot => (n * f + n, n),
            CoalitionEncoding::Fraction => (f + 1, 2),
        };
        MediatorCritic {
            net: MlpParams::new(input, hidden, output, rng),
            encoding,
            num_agents: n,
        }
    }

    pub fn input(&self, env_obs: &[Observation], coalition: &Coalition) -> Vec<f64> {
        let mut x = match self.encoding {
            CoalitionEncoding::OneHot => env_obs.concat(),
            CoalitionEncoding::Fraction => {
                let mut mean = vec![0.0; env_obs[0].len()];
                for o in env_obs {
                    for (m, v) in mean.iter_mut().zip(o) {
                        *m += v / env_obs.len() as f64;
                    }
                }
                mean
            }
        };
        x.extend(self.encoding.encode(coalition));
        x
    }

    /// Output slot holding `agent`'s value under `coalition`.
    pub fn slot(&self, agent: usize, coalition: &Coalition) -> usize {
        match self.encoding {
            CoalitionEncoding::OneHot => agent,
            CoalitionEncoding::Fraction => usize::from(!coalition.contains(agent)),
        }
    }

    pub fn values(&self, env_obs: &[Observation], coalition: &Coalition) -> Result<Vec<f64>> {
        let out = self.net.forward(&self.input(env_obs, coalition))?;
        Ok((0..self.num_agents).map(|i| out[self.slot(i, coalition)]).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Counterfactual {
    /// Agent leaves the coalition; requires membership.
    Remove,
    /// Agent joins the coalition; requires being outside.
    Add,
}

/// Agent `agent`'s value under `coalition` and under the coalition with
/// the agent removed or added. Observations are identical in both queries.
pub fn counterfactual_values(
    critic: &MediatorCritic,
    env_obs: &[Observation],
    coalition: &Coalition,
    agent: usize,
    direction: Counterfactual,
) -> Result<(f64, f64)> {
    let other = match direction {
        Counterfactual::Remove if coalition.contains(agent) => coalition.without(agent),
        Counterfactual::Add if !coalition.contains(agent) => coalition.with(agent),
        _ => {
            return Err(contract(format!(
                "{direction:?} is not defined for agent {agent} and coalition {}",
                coalition.label()
            )))
        }
    };
    let actual = critic.values(env_obs, coalition)?[agent];
    let counter = critic.values(env_obs, &other)?[agent];
    Ok((actual, counter))
}

/// Per-agent Lagrange multipliers, kept as logarithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangeState {
    pub log_ic: Vec<f64>,
    pub log_e: Vec<f64>,
    pub lr: f64,
    pub bounds: [f64; 2],
}

/// Constraint slack collected from a batch: for each agent, one entry per
/// commitment window in which the constraint applies.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DualSamples {
    /// `V_i(C) - V_i(C \ {i})` summed over the window, for windows with `i` in `C`.
    pub ic: Vec<Vec<f64>>,
    /// `V_j(C + j) - V_j(C)` summed over the window, for windows with `j` outside.
    pub e: Vec<Vec<f64>>,
}

impl DualSamples {
    pub fn new(num_agents: usize) -> Self {
        DualSamples {
            ic: vec![Vec::new(); num_agents],
            e: vec![Vec::new(); num_agents],
        }
    }
}

impl LagrangeState {
    pub fn new(num_agents: usize, lr: f64, bounds: [f64; 2]) -> Result<Self> {
        if !(bounds[0] <= 0.0 && 0.0 <= bounds[1]) || !lr.is_finite() || lr < 0.0 {
            return Err(crate::error::config(format!(
                "log lambda bounds {bounds:?} must contain 0 and lr {lr} must be non-negative"
            )));
        }
        Ok(LagrangeState {
            log_ic: vec![0.0; num_agents],
            log_e: vec![0.0; num_agents],
            lr,
            bounds,
        })
    }

    pub fn ic(&self, agent: usize) -> f64 {
        self.log_ic[agent].exp()
    }

    pub fn e(&self, agent: usize) -> f64 {
        self.log_e[agent].exp()
    }

    /// Zero multipliers, used to compare the constrained objective against
    /// the naive one.
    pub fn zero(num_agents: usize) -> Self {
        LagrangeState {
            log_ic: vec![f64::NEG_INFINITY; num_agents],
            log_e: vec![f64::NEG_INFINITY; num_agents],
            lr: 0.0,
            bounds: [f64::NEG_INFINITY, f64::INFINITY],
        }
    }
}

/// One dual-descent step: each multiplier moves against the mean slack of
/// its constraint, then is clamped. Agents without samples keep theirs.
pub fn lambda_update(state: &mut LagrangeState, samples: &DualSamples) {
    let [lo, hi] = state.bounds;
    let lr = state.lr;
    let step = |log: &mut f64, gaps: &[f64]| {
        if !gaps.is_empty() {
            let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
            *log = (*log - lr * mean).clamp(lo, hi);
        }
    };
    for (log, gaps) in state.log_ic.iter_mut().zip(&samples.ic) {
        step(log, gaps);
    }
    for (log, gaps) in state.log_e.iter_mut().zip(&samples.e) {
        step(log, gaps);
    }
}

/// Per-agent TD residuals of the mediator critic at one step.
fn td_residuals(
    critic: &MediatorCritic,
    step: &TrajectoryStep,
    next: Option<&TrajectoryStep>,
    gamma: f64,
) -> Result<Vec<f64>> {
    let v = critic.values(&step.env_obs, &step.coalition)?;
    let v_next = match next {
        Some(n) => critic.values(&n.env_obs, &n.coalition)?,
        None => vec![0.0; v.len()],
    };
    Ok((0..v.len())
        .map(|i| step.rewards[i] + gamma * v_next[i] - v[i])
        .collect())
}

/// Sum over agents of squared TD errors at one step, with its gradient.
pub fn mediator_critic_loss(
    critic: &MediatorCritic,
    step: &TrajectoryStep,
    next: Option<&TrajectoryStep>,
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    let delta = td_residuals(critic, step, next, gamma)?;
    let mut upstream = vec![0.0; critic.net.output_len()];
    for (i, d) in delta.iter().enumerate() {
        upstream[critic.slot(i, &step.coalition)] -= 2.0 * d;
    }
    let grads = critic
        .net
        .backward(&critic.input(&step.env_obs, &step.coalition), &upstream)?;
    Ok((delta.iter().map(|d| d * d).sum(), grads))
}

/// Scalar multiplying `log pi` in head `agent`'s objective.
pub fn head_weight(
    agent: usize,
    coalition: &Coalition,
    delta: &[f64],
    lagrange: &LagrangeState,
    mode: ObjectiveMode,
) -> f64 {
    let mut w: f64 = coalition.members().map(|j| delta[j]).sum();
    if mode.uses_ic() {
        w += lagrange.ic(agent) * delta[agent];
    }
    if mode.uses_e() {
        w -= coalition.outsiders().map(|j| lagrange.e(j) * delta[j]).sum::<f64>();
    }
    w
}

/// Policy-gradient loss of head `agent` at one step, with its gradient.
#[allow(clippy::too_many_arguments)]
pub fn mediator_actor_loss(
    actor: &MediatorActor,
    critic: &MediatorCritic,
    step: &TrajectoryStep,
    next: Option<&TrajectoryStep>,
    agent: usize,
    lagrange: &LagrangeState,
    mode: ObjectiveMode,
    gamma: f64,
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    let action = match step.mediator_actions.get(agent) {
        Some(Some(a)) if step.coalition.contains(agent) => *a,
        _ => {
            return Err(contract(format!(
                "agent {agent} is not in the coalition at turn {}",
                step.turn
            )))
        }
    };
    let delta = td_residuals(critic, step, next, gamma)?;
    let weight = head_weight(agent, &step.coalition, &delta, lagrange, mode);
    let x = actor.input(agent, &step.env_obs[agent], &step.coalition);
    let logits = actor.net.forward(&x)?;
    let (loss, dlogits) = policy_loss_grad(&logits, &actor.mask(agent), action, weight, beta)?;
    Ok((loss, actor.net.backward(&x, &dlogits)?))
}

/// Constraint slack of every commitment window in `episode`.
pub fn collect_dual_samples(
    critic: &MediatorCritic,
    episode: &Episode,
    gamma: f64,
    samples: &mut DualSamples,
) -> Result<()> {
    let mut batch = BatchEval::new(&critic.net);
    dual_samples_batched(critic, &mut batch, episode, gamma, samples)
}

/// Same as [`collect_dual_samples`], reusing critic outputs already held by
/// `batch`. Each step costs one actual and one counterfactual evaluation per
/// agent, deduplicated across the batch.
fn dual_samples_batched(
    critic: &MediatorCritic,
    batch: &mut BatchEval,
    episode: &Episode,
    gamma: f64,
    samples: &mut DualSamples,
) -> Result<()> {
    let n = critic.num_agents;
    for start in episode.window_starts() {
        let end = episode.window_end(start);
        let coalition = &episode.steps[start].coalition;
        let mut ic = vec![0.0; n];
        let mut e = vec![0.0; n];
        for (l, step) in episode.steps[start..end].iter().enumerate() {
            let discount = gamma.powi(l as i32);
            let actual = batch.eval(&critic.input(&step.env_obs, coalition));
            for i in 0..n {
                let member = coalition.contains(i);
                let other = if member {
                    coalition.without(i)
                } else {
                    coalition.with(i)
                };
                let cf = batch.eval(&critic.input(&step.env_obs, &other));
                let v = batch.output(actual)[critic.slot(i, coalition)];
                let c = batch.output(cf)[critic.slot(i, &other)];
                if member {
                    ic[i] += discount * (v - c);
                } else {
                    e[i] += discount * (c - v);
                }
            }
        }
        for i in 0..n {
            if coalition.contains(i) {
                samples.ic[i].push(ic[i]);
            } else {
                samples.e[i].push(e[i]);
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MediatorStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub heads: usize,
}

#[derive(Clone, Debug)]
pub struct MediatorLearner {
    pub actor: MediatorActor,
    pub critic: MediatorCritic,
    pub lagrange: LagrangeState,
    pub config: MediatorConfig,
    pub gamma: f64,
    actor_opt: Adam,
    critic_opt: Adam,
}

impl MediatorLearner {
    pub fn new<R: Rng + ?Sized>(spec: &PayoffSpec, config: MediatorConfig, gamma: f64, rng: &mut R) -> Result<Self> {
        let encoding = config.encoding();
        let actor = MediatorActor::new(spec, encoding, config.learner.hidden, rng);
        let critic = MediatorCritic::new(spec, encoding, config.learner.hidden, rng);
        Ok(MediatorLearner {
            actor_opt: Adam::new(actor.net.len(), config.learner.lr_actor),
            critic_opt: Adam::new(critic.net.len(), config.learner.lr_critic),
            lagrange: LagrangeState::new(spec.num_agents, config.lambda_lr, config.log_lambda_bounds)?,
            actor,
            critic,
            config,
            gamma,
        })
    }

    /// One step on the critic, the actor and, for constrained modes, the
    /// multipliers. All three use values from the critic before its update.
    pub fn update(&mut self, episodes: &[Episode], beta: f64) -> Result<MediatorStats> {
        let gamma = self.gamma;
        let mode = self.config.mode;
        let total_steps: usize = episodes.iter().map(|e| e.steps.len()).sum();
        let total_heads: usize = episodes.iter().flat_map(|e| &e.steps).map(|s| s.coalition.size()).sum();
        let mut stats = MediatorStats {
            heads: total_heads,
            ..Default::default()
        };
        if total_steps == 0 {
            return Ok(stats);
        }
        let critic = &self.critic;
        let actor = &self.actor;
        let mut cb = BatchEval::new(&critic.net);
        let mut ab = BatchEval::new(&actor.net);
        let critic_scale = 1.0 / total_steps as f64;
        let actor_scale = 1.0 / total_heads.max(1) as f64;
        let n = critic.num_agents;
        let mut delta = vec![0.0; n];
        for ep in episodes {
            let mut next_id = None;
            // walk backwards so each step's bootstrap is already evaluated
            for t in (0..ep.steps.len()).rev() {
                let step = &ep.steps[t];
                let id = cb.eval(&critic.input(&step.env_obs, &step.coalition));
                for (i, d) in delta.iter_mut().enumerate() {
                    let boot = match next_id {
                        Some(nid) => cb.output(nid)[critic.slot(i, &ep.steps[t + 1].coalition)],
                        None => 0.0,
                    };
                    *d = step.rewards[i] + gamma * boot - cb.output(id)[critic.slot(i, &step.coalition)];
                }
                for (i, d) in delta.iter().enumerate() {
                    cb.accumulate_at(id, critic.slot(i, &step.coalition), -2.0 * d * critic_scale);
                    stats.critic_loss += d * d * critic_scale;
                }
                for i in step.coalition.members() {
                    let action = step.mediator_actions[i]
                        .ok_or_else(|| contract(format!("no mediator action for member {i}")))?;
                    let weight = head_weight(i, &step.coalition, &delta, &self.lagrange, mode);
                    let aid = ab.eval(&actor.input(i, &step.env_obs[i], &step.coalition));
                    let (loss, dlogits) = policy_loss_grad(ab.output(aid), &actor.mask(i), action, weight, beta)?;
                    ab.accumulate(aid, &dlogits, actor_scale);
                    stats.actor_loss += loss * actor_scale;
                }
                next_id = Some(id);
            }
        }
        if !(stats.actor_loss.is_finite() && stats.critic_loss.is_finite()) {
            return Err(Error::NonFinite(format!(
                "mediator losses: actor {} critic {}",
                stats.actor_loss, stats.critic_loss
            )));
        }
        let dual = if mode.uses_ic() || mode.uses_e() {
            let mut samples = DualSamples::new(n);
            for ep in episodes {
                dual_samples_batched(critic, &mut cb, ep, gamma, &mut samples)?;
            }
            Some(samples)
        } else {
            None
        };
        let critic_grad = cb.gradient();
        let actor_grad = ab.gradient();
        self.critic_opt.step(self.critic.net.as_mut_slice(), &critic_grad)?;
        self.actor_opt.step(self.actor.net.as_mut_slice(), &actor_grad)?;
        if let Some(mut samples) = dual {
            if !mode.uses_ic() {
                samples.ic.iter_mut().for_each(Vec::clear);
            }
            if !mode.uses_e() {
                samples.e.iter_mut().for_each(Vec::clear);
            }
            lambda_update(&mut self.lagrange, &samples);
        }
        Ok(stats)
    }
}
