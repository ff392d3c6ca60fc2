//! Episode sampling under the mediation protocol.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::sample;
use crate::error::{contract, Result};
use crate::game::{self, Observation, PayoffSpec};
use crate::mediation::{assemble_joint_action, form_coalition, legal_action_mask, Coalition, CommitmentState, Status};

/// Action distributions used to drive an episode.
pub trait JointPolicy {
    /// Distribution over agent `agent`'s actions (environment actions, then
    /// commit when a mediator is present) given its observation.
    fn agent_probs(&self, agent: usize, turn: usize, obs: &Observation, status: Status) -> Result<Vec<f64>>;

    /// Mediator's distribution over `agent`'s environment actions.
    fn mediator_probs(
        &self,
        agent: usize,
        turn: usize,
        env_obs: &Observation,
        coalition: &Coalition,
    ) -> Result<Vec<f64>>;
}

/// How agent observations are laid out for a game and window.
#[derive(Clone, Debug, PartialEq)]
pub struct Protocol {
    pub spec: PayoffSpec,
    pub window: usize,
    pub mediated: bool,
    pub status_feature: bool,
}

impl Protocol {
    pub fn new(spec: PayoffSpec, window: usize, mediated: bool) -> Result<Self> {
        spec.validate()?;
        if window == 0 {
            return Err(crate::error::config("commitment window k must be at least 1"));
        }
        let status_feature = spec.has_status_feature(window);
        Ok(Protocol {
            spec,
            window,
            mediated,
            status_feature,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.spec.num_agents
    }

    pub fn obs_len(&self) -> usize {
        self.spec.env_feature_len() + usize::from(self.status_feature)
    }

    /// Size of agent `agent`'s action space including commit.
    pub fn agent_actions(&self, agent: usize) -> usize {
        self.spec.num_actions(agent) + usize::from(self.mediated)
    }

    pub fn commit_action(&self, agent: usize) -> Option<usize> {
        self.mediated.then(|| self.spec.num_actions(agent))
    }

    pub fn observe(&self, env_obs: &Observation, status: Status) -> Observation {
        let mut o = env_obs.clone();
        if self.status_feature {
            o.push(status.value());
        }
        o
    }

    pub fn agent_mask(&self, agent: usize, status: Status) -> Vec<bool> {
        if self.mediated {
            legal_action_mask(status, self.spec.num_actions(agent))
        } else {
            vec![true; self.spec.num_actions(agent)]
        }
    }
}

/// Everything that happened at one turn of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub turn: usize,
    /// Agent observations, status flag included when the layout has one.
    pub obs: Vec<Observation>,
    /// Environment features only; the mediator's view of each agent.
    pub env_obs: Vec<Observation>,
    pub status: Vec<Status>,
    /// Raw agent choices, commit included.
    pub choices: Vec<usize>,
    pub coalition: Coalition,
    pub mediator_actions: Vec<Option<usize>>,
    pub joint_action: Vec<usize>,
    pub rewards: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub window: usize,
    pub steps: Vec<TrajectoryStep>,
}

impl Episode {
    /// Undiscounted return of each agent.
    pub fn returns(&self) -> Vec<f64> {
        let n = self.steps.first().map_or(0, |s| s.rewards.len());
        let mut out = vec![0.0; n];
        for s in &self.steps {
            for (o, r) in out.iter_mut().zip(&s.rewards) {
                *o += r;
            }
        }
        out
    }

    /// Mediator's undiscounted return for the coalition of each turn.
    pub fn mediator_return(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.coalition.members().map(|i| s.rewards[i]).sum::<f64>())
            .sum()
    }

    /// Turns at which commitment was decided.
    pub fn window_starts(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.steps.len()).filter(move |t| t % self.window == 0)
    }

    /// Last turn (exclusive) of the window starting at `start`.
    pub fn window_end(&self, start: usize) -> usize {
        (start + self.window).min(self.steps.len())
    }
}

/// Play one episode of the mediated game.
pub fn sample_episode<P: JointPolicy + ?Sized, R: Rng + ?Sized>(
    protocol: &Protocol,
    policy: &P,
    rng: &mut R,
) -> Result<Episode> {
    let spec = &protocol.spec;
    let n = spec.num_agents;
    let mut state = game::reset(spec, 0)?;
    let mut commitment = CommitmentState::initial(n, protocol.window)?;
    let commit_ids: Vec<usize> = (0..n)
        .map(|i| protocol.commit_action(i).unwrap_or(usize::MAX))
        .collect();
    let mut steps = Vec::with_capacity(spec.horizon);
    while !state.terminal {
        let turn = state.turn;
        let env_obs: Vec<Observation> = (0..n).map(|i| spec.env_features(&state, i)).collect();
        let obs: Vec<Observation> = env_obs
            .iter()
            .zip(&commitment.status)
            .map(|(o, &s)| protocol.observe(o, s))
            .collect();
        let mut choices = Vec::with_capacity(n);
        for (i, o) in obs.iter().enumerate() {
            let probs = policy.agent_probs(i, turn, o, commitment.status[i])?;
            let mask = protocol.agent_mask(i, commitment.status[i]);
            if probs.len() != mask.len() {
                return Err(contract(format!(
                    "agent {i} policy has {} entries, expected {}",
                    probs.len(),
                    mask.len()
                )));
            }
            let masked: Vec<f64> = probs
                .iter()
                .zip(&mask)
                .map(|(&p, &m)| if m { p } else { 0.0 })
                .collect();
            if masked.iter().sum::<f64>() <= 0.0 {
                return Err(contract(format!("agent {i} has no legal action with mass")));
            }
            choices.push(sample(&masked, rng));
        }
        commitment = if protocol.mediated {
            form_coalition(&choices, &commit_ids, &commitment, turn)?
        } else {
            commitment
        };
        let coalition = commitment.coalition.clone();
        let mut mediator_actions = vec![None; n];
        for i in coalition.members() {
            let probs = policy.mediator_probs(i, turn, &env_obs[i], &coalition)?;
            mediator_actions[i] = Some(sample(&probs, rng));
        }
        let own: Vec<Option<usize>> = choices
            .iter()
            .enumerate()
            .map(|(i, &c)| (!coalition.contains(i)).then_some(c))
            .collect();
        let joint_action = assemble_joint_action(&own, &mediator_actions, &coalition)?;
        let (next, rewards) = game::step(spec, &state, &joint_action)?;
        steps.push(TrajectoryStep {
            turn,
            obs,
            env_obs,
            status: commitment.status.clone(),
            choices,
            coalition,
            mediator_actions,
            joint_action,
            rewards,
        });
        state = next;
        commitment = commitment.next_turn();
    }
    Ok(Episode {
        window: protocol.window,
        steps,
    })
}
