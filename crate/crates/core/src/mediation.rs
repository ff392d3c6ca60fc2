//! The minimal-mediator protocol: commitment, coalition windows and
//! action masking.
//!
//! Each agent's action space is its environment actions followed by a
//! single `commit` action. Agents may only commit at turns divisible by the
//! commitment window `k`; the coalition then stays fixed for `k` turns (the
//! last window is cut short at the end of the episode).

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::game::Observation;

/// Set of agents that handed control to the mediator.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Coalition(Vec<bool>);

impl Coalition {
    pub fn empty(num_agents: usize) -> Self {
        Coalition(vec![false; num_agents])
    }

    pub fn full(num_agents: usize) -> Self {
        Coalition(vec![true; num_agents])
    }

    pub fn from_members(num_agents: usize, members: &[usize]) -> Self {
        let mut c = Coalition::empty(num_agents);
        for &i in members {
            c.0[i] = true;
        }
        c
    }

    pub fn from_flags(flags: Vec<bool>) -> Self {
        Coalition(flags)
    }

    /// Decode the low `num_agents` bits of `mask`.
    pub fn from_bits(num_agents: usize, mask: usize) -> Self {
        Coalition((0..num_agents).map(|i| mask >> i & 1 == 1).collect())
    }

    pub fn bits(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &m)| if m { acc | 1 << i } else { acc })
    }

    pub fn num_agents(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, agent: usize) -> bool {
        self.0[agent]
    }

    pub fn size(&self) -> usize {
        self.0.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.size() == 0
    }

    pub fn is_full(&self) -> bool {
        self.0.iter().all(|&m| m)
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }

    pub fn outsiders(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &m)| !m).map(|(i, _)| i)
    }

    pub fn with(&self, agent: usize) -> Self {
        let mut c = self.clone();
        c.0[agent] = true;
        c
    }

    pub fn without(&self, agent: usize) -> Self {
        let mut c = self.clone();
        c.0[agent] = false;
        c
    }

    pub fn flags(&self) -> &[bool] {
        &self.0
    }

    /// Compact label such as `[1,0,1]`.
    pub fn label(&self) -> String {
        let inner: Vec<&str> = self.0.iter().map(|&m| if m { "1" } else { "0" }).collect();
        format!("[{}]", inner.join(","))
    }
}

/// Coalition status of one agent at one turn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    /// Inside a window without having committed: may not commit.
    Locked,
    /// Window start: every action including commit is legal.
    Free,
    /// Inside a window after committing: the mediator acts.
    Committed,
}

impl Status {
    pub fn value(self) -> f64 {
        match self {
            Status::Locked => -1.0,
            Status::Free => 0.0,
            Status::Committed => 1.0,
        }
    }

    pub fn from_value(s: i8) -> Result<Self> {
        match s {
            -1 => Ok(Status::Locked),
            0 => Ok(Status::Free),
            1 => Ok(Status::Committed),
            _ => Err(contract(format!("status must be -1, 0 or 1, got {s}"))),
        }
    }
}

/// Which actions are legal for an agent with status `status`.
///
/// The returned mask covers the `num_env_actions` environment actions
/// followed by commit.
pub fn legal_action_mask(status: Status, num_env_actions: usize) -> Vec<bool> {
    let mut mask = vec![status != Status::Committed; num_env_actions + 1];
    mask[num_env_actions] = status != Status::Locked;
    mask
}

/// Commitment bookkeeping for the turn `turn`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitmentState {
    pub coalition: Coalition,
    pub window: usize,
    pub turn: usize,
    /// Status each agent had when choosing its action this turn.
    pub status: Vec<Status>,
}

impl CommitmentState {
    pub fn initial(num_agents: usize, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(contract("commitment window must be at least 1"));
        }
        Ok(CommitmentState {
            coalition: Coalition::empty(num_agents),
            window,
            turn: 0,
            status: vec![Status::Free; num_agents],
        })
    }

    pub fn phase(&self) -> usize {
        self.turn % self.window
    }

    pub fn is_window_start(&self) -> bool {
        self.phase() == 0
    }

    /// State at the start of the following turn, before anyone acts.
    pub fn next_turn(&self) -> Self {
        let turn = self.turn + 1;
        let status = if turn.is_multiple_of(self.window) {
            vec![Status::Free; self.coalition.num_agents()]
        } else {
            self.coalition
                .flags()
                .iter()
                .map(|&m| if m { Status::Committed } else { Status::Locked })
                .collect()
        };
        CommitmentState {
            coalition: self.coalition.clone(),
            window: self.window,
            turn,
            status,
        }
    }
}

/// Resolve this turn's coalition from the agents' raw choices.
///
/// `commit_actions[i]` is agent `i`'s commit index. At window starts the
/// coalition is exactly the set of committing agents; inside a window it is
/// carried over and the choices must agree with the statuses.
pub fn form_coalition(
    choices: &[usize],
    commit_actions: &[usize],
    prev: &CommitmentState,
    turn: usize,
) -> Result<CommitmentState> {
    let n = prev.coalition.num_agents();
    if choices.len() != n || commit_actions.len() != n {
        return Err(contract(format!("expected {n} choices, got {}", choices.len())));
    }
    if prev.turn != turn {
        return Err(contract(format!(
            "commitment state is for turn {}, not {turn}",
            prev.turn
        )));
    }
    let coalition = if turn.is_multiple_of(prev.window) {
        Coalition::from_flags(choices.iter().zip(commit_actions).map(|(c, m)| c == m).collect())
    } else {
        for i in 0..n {
            let committed = choices[i] == commit_actions[i];
            match prev.status[i] {
                Status::Committed if !committed => {
                    return Err(contract(format!(
                        "agent {i} is committed but chose action {}",
                        choices[i]
                    )))
                }
                Status::Locked if committed => {
                    return Err(contract(format!("agent {i} committed outside a commitment turn")))
                }
                Status::Free => return Err(contract(format!("agent {i} is free in the middle of a window"))),
                _ => {}
            }
        }
        prev.coalition.clone()
    };
    Ok(CommitmentState {
        coalition,
        window: prev.window,
        turn,
        status: prev.status.clone(),
    })
}

/// Environment joint action: the mediator's choice for coalition members,
/// the agent's own choice for everyone else.
pub fn assemble_joint_action(
    agent_actions: &[Option<usize>],
    mediator_actions: &[Option<usize>],
    coalition: &Coalition,
) -> Result<Vec<usize>> {
    let n = coalition.num_agents();
    if agent_actions.len() != n || mediator_actions.len() != n {
        return Err(contract("action vectors must cover every agent"));
    }
    (0..n)
        .map(|i| {
            let source = if coalition.contains(i) {
                mediator_actions[i]
            } else {
                agent_actions[i]
            };
            source.ok_or_else(|| contract(format!("no environment action for agent {i}")))
        })
        .collect()
}

/// How the mediator sees the coalition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoalitionEncoding {
    /// One flag per agent, plus a one-hot agent id for the actor.
    OneHot,
    /// Coalition size over `N`; one shared policy for all members.
    Fraction,
}

impl CoalitionEncoding {
    pub fn encode(self, coalition: &Coalition) -> Vec<f64> {
        match self {
            CoalitionEncoding::OneHot => coalition.flags().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
            CoalitionEncoding::Fraction => {
                vec![coalition.size() as f64 / coalition.num_agents() as f64]
            }
        }
    }

    pub fn len(self, num_agents: usize) -> usize {
        match self {
            CoalitionEncoding::OneHot => num_agents,
            CoalitionEncoding::Fraction => 1,
        }
    }
}

/// Input of the mediator's per-agent policy head.
#[derive(Clone, Debug, PartialEq)]
pub struct MediatorObservation {
    pub agent_obs: Observation,
    pub coalition: Vec<f64>,
    pub agent_id: Option<Vec<f64>>,
}

impl MediatorObservation {
    pub fn new(agent_obs: Observation, coalition: &Coalition, agent: usize, encoding: CoalitionEncoding) -> Self {
        let agent_id = match encoding {
            CoalitionEncoding::OneHot => {
                let mut id = vec![0.0; coalition.num_agents()];
                id[agent] = 1.0;
                Some(id)
            }
            CoalitionEncoding::Fraction => None,
        };
        MediatorObservation {
            agent_obs,
            coalition: encoding.encode(coalition),
            agent_id,
        }
    }

    pub fn to_input(&self) -> Vec<f64> {
        let mut x = self.agent_obs.clone();
        x.extend_from_slice(&self.coalition);
        if let Some(id) = &self.agent_id {
            x.extend_from_slice(id);
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks() {
        assert_eq!(legal_action_mask(Status::Free, 2), vec![true, true, true]);
        assert_eq!(legal_action_mask(Status::Locked, 2), vec![true, true, false]);
        assert_eq!(legal_action_mask(Status::Committed, 2), vec![false, false, true]);
    }

    #[test]
    fn status_values() {
        for s in [-1i8, 0, 1] {
            assert_eq!(Status::from_value(s).unwrap().value(), s as f64);
        }
        assert!(Status::from_value(2).is_err());
    }

    #[test]
    fn ex_post_coalition() {
        let st = CommitmentState::initial(2, 1).unwrap();
        let c = form_coalition(&[2, 2], &[2, 2], &st, 0).unwrap();
        assert_eq!(c.coalition, Coalition::full(2));
        // k = 1: every turn is a window start
        let next = c.next_turn();
        assert_eq!(next.status, vec![Status::Free; 2]);
    }

    #[test]
    fn window_keeps_coalition() {
        let st = CommitmentState::initial(2, 2).unwrap();
        let c0 = form_coalition(&[2, 0], &[2, 2], &st, 0).unwrap();
        assert_eq!(c0.coalition, Coalition::from_members(2, &[0]));
        let st1 = c0.next_turn();
        assert_eq!(st1.status, vec![Status::Committed, Status::Locked]);
        for other in [0, 1] {
            let c1 = form_coalition(&[2, other], &[2, 2], &st1, 1).unwrap();
            assert_eq!(c1.coalition, Coalition::from_members(2, &[0]));
        }
        // masked choices are contract violations
        assert!(form_coalition(&[0, 1], &[2, 2], &st1, 1).is_err());
        assert!(form_coalition(&[2, 2], &[2, 2], &st1, 1).is_err());
        // the next window starts fresh
        let st2 = form_coalition(&[2, 1], &[2, 2], &st1, 1).unwrap().next_turn();
        assert_eq!(st2.status, vec![Status::Free; 2]);
    }

    #[test]
    fn unanimous_long_window() {
        let st = CommitmentState::initial(3, 10).unwrap();
        let c = form_coalition(&[2, 2, 2], &[2, 2, 2], &st, 0).unwrap();
        assert_eq!(c.coalition, Coalition::full(3));
        assert_eq!(c.next_turn().status, vec![Status::Committed; 3]);
    }

    #[test]
    fn joint_action_substitution() {
        let c = Coalition::from_members(2, &[1]);
        let j = assemble_joint_action(&[Some(0), None], &[None, Some(1)], &c).unwrap();
        assert_eq!(j, vec![0, 1]);
        let empty = Coalition::empty(2);
        let j = assemble_joint_action(&[Some(1), Some(0)], &[None, None], &empty).unwrap();
        assert_eq!(j, vec![1, 0]);
        let full = Coalition::full(2);
        let j = assemble_joint_action(&[None, None], &[Some(1), Some(1)], &full).unwrap();
        assert_eq!(j, vec![1, 1]);
        assert!(assemble_joint_action(&[None, None], &[Some(1), None], &full).is_err());
    }

    #[test]
    fn encodings() {
        let c = Coalition::from_members(3, &[0, 2]);
        assert_eq!(CoalitionEncoding::OneHot.encode(&c), vec![1.0, 0.0, 1.0]);
        assert_eq!(CoalitionEncoding::Fraction.encode(&c), vec![2.0 / 3.0]);
        assert_eq!(c.label(), "[1,0,1]");
        assert_eq!(Coalition::from_bits(3, c.bits()), c);
        let o = MediatorObservation::new(vec![1.0], &c, 2, CoalitionEncoding::OneHot);
        assert_eq!(o.to_input(), vec![1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let o = MediatorObservation::new(vec![1.0], &c, 2, CoalitionEncoding::Fraction);
        assert_eq!(o.to_input(), vec![1.0, 2.0 / 3.0]);
    }
}
