//! Markov-game definitions for the matrix games and public goods games.
//!
//! Specs are immutable values; stepping is a pure function of
//! `(spec, state, joint action)`.

use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Result};

pub const DEFECT: usize = 0;
pub const COOPERATE: usize = 1;
/// Third action of the second player in the sacrifice variant of PD.
pub const SACRIFICE: usize = 2;

/// Iterative PGG agents contribute this fraction of their endowment.
pub const CONTRIBUTION_FRACTION: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    MatrixGame,
    OneShotPgg,
    IterativePgg,
}

/// Payoffs of one stage of a matrix game.
///
/// `rewards` is row-major over agent order: the joint action
/// `(a_0, .., a_{N-1})` lives at `sum_i a_i * prod_{j>i} actions[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffTable {
    pub actions: Vec<usize>,
    pub rewards: Vec<Vec<f64>>,
}

impl PayoffTable {
    pub fn num_joint_actions(&self) -> usize {
        self.actions.iter().product()
    }

    pub fn index(&self, joint: &[usize]) -> usize {
        joint.iter().zip(&self.actions).fold(0, |acc, (&a, &n)| acc * n + a)
    }

    pub fn payoff(&self, joint: &[usize]) -> &[f64] {
        &self.rewards[self.index(joint)]
    }

    fn validate(&self, num_agents: usize) -> Result<()> {
        if self.actions.len() != num_agents {
            return Err(config(format!(
                "payoff table lists {} action counts for {} agents",
                self.actions.len(),
                num_agents
            )));
        }
        if self.actions.contains(&0) {
            return Err(config("every agent needs at least one action"));
        }
        if self.rewards.len() != self.num_joint_actions() {
            return Err(config(format!(
                "payoff table has {} entries, expected {}",
                self.rewards.len(),
                self.num_joint_actions()
            )));
        }
        if let Some(bad) = self.rewards.iter().find(|r| r.len() != num_agents) {
            return Err(config(format!(
                "reward vector of length {} in a {num_agents}-agent game",
                bad.len()
            )));
        }
        if self.rewards.iter().flatten().any(|r| !r.is_finite()) {
            return Err(config("payoffs must be finite"));
        }
        Ok(())
    }
}

/// Declarative description of a game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffSpec {
    pub kind: GameKind,
    pub num_agents: usize,
    /// Public-good multiplier; ignored by matrix games.
    #[serde(default)]
    pub multiplier: f64,
    pub horizon: usize,
    /// One table per turn for matrix games, empty otherwise.
    #[serde(default)]
    pub tables: Vec<PayoffTable>,
}

impl PayoffSpec {
    pub fn prisoners_dilemma() -> Self {
        PayoffSpec {
            kind: GameKind::MatrixGame,
            num_agents: 2,
            multiplier: 0.0,
            horizon: 1,
            tables: vec![pd_table(2.0, 2.0)],
        }
    }

    /// PD where the second player may sacrifice its own payoff for a
    /// higher total.
    pub fn pd_with_sacrifice() -> Self {
        let rewards = vec![
            vec![1.0, 1.0],
            vec![3.0, 0.0],
            vec![5.0, 0.0],
            vec![0.0, 3.0],
            vec![2.0, 2.0],
            vec![5.0, 0.0],
        ];
        PayoffSpec {
            kind: GameKind::MatrixGame,
            num_agents: 2,
            multiplier: 0.0,
            horizon: 1,
            tables: vec![PayoffTable {
                actions: vec![2, 3],
                rewards,
            }],
        }
    }

    /// Two turns: mutual cooperation in the first favours only the second
    /// agent, the second turn is the plain PD.
    pub fn two_step_pd() -> Self {
        PayoffSpec {
            kind: GameKind::MatrixGame,
            num_agents: 2,
            multiplier: 0.0,
            horizon: 2,
            tables: vec![pd_table(-1.0, 4.0), pd_table(2.0, 2.0)],
        }
    }

    pub fn public_goods(num_agents: usize, multiplier: f64) -> Self {
        PayoffSpec {
            kind: GameKind::OneShotPgg,
            num_agents,
            multiplier,
            horizon: 1,
            tables: Vec::new(),
        }
    }

    pub fn iterative_public_goods(num_agents: usize, multiplier: f64) -> Self {
        PayoffSpec {
            kind: GameKind::IterativePgg,
            num_agents,
            multiplier,
            horizon: 10,
            tables: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_agents == 0 {
            return Err(config("a game needs at least one agent"));
        }
        if self.horizon == 0 {
            return Err(config("horizon must be at least 1"));
        }
        match self.kind {
            GameKind::MatrixGame => {
                if self.tables.len() != self.horizon {
                    return Err(config(format!(
                        "matrix game with horizon {} has {} payoff tables",
                        self.horizon,
                        self.tables.len()
                    )));
                }
                let first = &self.tables[0].actions;
                for table in &self.tables {
                    table.validate(self.num_agents)?;
                    if &table.actions != first {
                        return Err(config("action sets must not change between turns"));
                    }
                }
            }
            GameKind::OneShotPgg | GameKind::IterativePgg => {
                if self.num_agents < 2 {
                    return Err(config("public goods games need at least two agents"));
                }
                let big_n = self.num_agents as f64;
                if !(self.multiplier > 1.0 && self.multiplier < big_n) {
                    return Err(config(format!(
                        "multiplier must satisfy 1 < n < N, got n={} N={}",
                        self.multiplier, self.num_agents
                    )));
                }
                if self.kind == GameKind::OneShotPgg && self.horizon != 1 {
                    return Err(config("one-shot PGG has horizon 1"));
                }
            }
        }
        Ok(())
    }

    /// Number of environment actions available to `agent`.
    pub fn num_actions(&self, agent: usize) -> usize {
        match self.kind {
            GameKind::MatrixGame => self.tables[0].actions[agent],
            _ => 2,
        }
    }

    pub fn max_actions(&self) -> usize {
        (0..self.num_agents).map(|i| self.num_actions(i)).max().unwrap_or(0)
    }

    /// Whether agent observations carry the commitment status flag for
    /// commitment window `k`.
    pub fn has_status_feature(&self, k: usize) -> bool {
        match self.kind {
            GameKind::MatrixGame => self.horizon > 1,
            GameKind::IterativePgg => k > 1,
            GameKind::OneShotPgg => false,
        }
    }

    /// Length of an agent's environment features (before the status flag).
    pub fn env_feature_len(&self) -> usize {
        match self.kind {
            GameKind::IterativePgg => 2,
            _ => 1,
        }
    }

    /// Agent-private features of the environment state.
    ///
    /// One-shot games see a constant dummy, multi-turn matrix games see the
    /// turn normalized by the horizon, iterative PGG sees `(e_i, t / h)`.
    pub fn env_features(&self, state: &GameState, agent: usize) -> Observation {
        let t = state.turn as f64 / self.horizon as f64;
        match self.kind {
            GameKind::IterativePgg => vec![state.endowments[agent], t],
            _ if self.horizon == 1 => vec![1.0],
            _ => vec![t],
        }
    }
}

fn pd_table(cc0: f64, cc1: f64) -> PayoffTable {
    PayoffTable {
        actions: vec![2, 2],
        rewards: vec![vec![0.0, 0.0], vec![7.0, -5.0], vec![-5.0, 7.0], vec![cc0, cc1]],
    }
}

/// Fixed-length feature vector seen by one agent.
pub type Observation = Vec<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameState {
    pub turn: usize,
    /// Per-agent endowments; empty outside the iterative PGG.
    pub endowments: Vec<f64>,
    pub terminal: bool,
}

/// Fresh episode state. The start state is deterministic, `_seed` is kept
/// so that stochastic games can slot in without an API change.
pub fn reset(spec: &PayoffSpec, _seed: u64) -> Result<GameState> {
    spec.validate()?;
    let endowments = match spec.kind {
        GameKind::IterativePgg => vec![1.0; spec.num_agents],
        _ => Vec::new(),
    };
    Ok(GameState {
        turn: 0,
        endowments,
        terminal: false,
    })
}

/// Advance one turn. Returns the next state and each agent's reward.
pub fn step(spec: &PayoffSpec, state: &GameState, joint_action: &[usize]) -> Result<(GameState, Vec<f64>)> {
    if state.terminal || state.turn >= spec.horizon {
        return Err(contract("step called on a terminal state"));
    }
    if joint_action.len() != spec.num_agents {
        return Err(contract(format!(
            "joint action has {} entries for {} agents",
            joint_action.len(),
            spec.num_agents
        )));
    }
    for (i, &a) in joint_action.iter().enumerate() {
        if a >= spec.num_actions(i) {
            return Err(contract(format!("action {a} out of range for agent {i}")));
        }
    }
    let contributions = || -> Vec<bool> { joint_action.iter().map(|&a| a == COOPERATE).collect() };
    let (endowments, rewards) = match spec.kind {
        GameKind::MatrixGame => (Vec::new(), spec.tables[state.turn].payoff(joint_action).to_vec()),
        GameKind::OneShotPgg => (Vec::new(), pgg_reward(&contributions(), spec.multiplier)),
        GameKind::IterativePgg => pgg_iter_endowments(&state.endowments, &contributions(), spec.multiplier),
    };
    let turn = state.turn + 1;
    Ok((
        GameState {
            turn,
            endowments,
            terminal: turn == spec.horizon,
        },
        rewards,
    ))
}

/// One-shot public goods rewards `r_i = (n/N) sum_j c_j - c_i`.
pub fn pgg_reward(contributions: &[bool], multiplier: f64) -> Vec<f64> {
    let big_n = contributions.len() as f64;
    let total = contributions.iter().filter(|&&c| c).count() as f64;
    let share = multiplier / big_n * total;
    contributions
        .iter()
        .map(|&c| share - if c { 1.0 } else { 0.0 })
        .collect()
}

/// One turn of the iterative PGG.
///
/// Contributors pay half their endowment into the pool, the pool is
/// multiplied by `n` and split evenly. Rewards are endowment deltas.
pub fn pgg_iter_step(spec: &PayoffSpec, state: &GameState, contributions: &[bool]) -> Result<(GameState, Vec<f64>)> {
    if spec.kind != GameKind::IterativePgg {
        return Err(contract("pgg_iter_step needs an iterative PGG spec"));
    }
    let joint: Vec<usize> = contributions
        .iter()
        .map(|&c| if c { COOPERATE } else { DEFECT })
        .collect();
    step(spec, state, &joint)
}

fn pgg_iter_endowments(endowments: &[f64], contributions: &[bool], multiplier: f64) -> (Vec<f64>, Vec<f64>) {
    let big_n = endowments.len() as f64;
    let paid: Vec<f64> = endowments
        .iter()
        .zip(contributions)
        .map(|(&e, &c)| if c { CONTRIBUTION_FRACTION * e } else { 0.0 })
        .collect();
    let share = multiplier / big_n * paid.iter().sum::<f64>();
    let next: Vec<f64> = endowments.iter().zip(&paid).map(|(&e, &p)| e - p + share).collect();
    let rewards = next.iter().zip(endowments).map(|(a, b)| a - b).collect();
    (next, rewards)
}
