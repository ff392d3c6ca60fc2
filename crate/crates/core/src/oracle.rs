//! Exact expected payoffs, best-response gaps, optimal constrained PGG
//! mediators and reward normalization.
//!
//! Profiles here are stationary per turn: an agent's distribution depends
//! on the turn and, through masking, on its commitment status.

use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Error, Result};
use crate::game::{self, GameKind, GameState, Observation, PayoffSpec, COOPERATE, DEFECT};
use crate::mediation::{assemble_joint_action, form_coalition, Coalition, CommitmentState, Status};
use crate::rollout::{JointPolicy, Protocol};

const PROB_TOL: f64 = 1e-12;
/// Upper bound on enumerated outcome paths before giving up.
const MAX_PATHS: f64 = 2e7;

fn default_window() -> usize {
    1
}

/// Mediator strategy inside a [`MixedProfile`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MediatorPolicy {
    /// `rules[turn][bits][i]` is the distribution of member `i` of the
    /// coalition whose bit `j` is set iff agent `j` is a member. Entries of
    /// non-members are empty.
    ByCoalition { rules: Vec<Vec<Vec<Vec<f64>>>> },
    /// `by_size[turn][m - 1]` is every member's distribution when `|C| = m`.
    BySize { by_size: Vec<Vec<Vec<f64>>> },
}

/// A mixed strategy for every agent and, optionally, the mediator.
///
/// `agents[turn][i]` covers agent `i`'s environment actions followed by
/// commit when a mediator is present. A single turn entry is reused for all
/// turns, likewise for the mediator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedProfile {
    #[serde(default = "default_window")]
    pub window: usize,
    pub agents: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub mediator: Option<MediatorPolicy>,
}

fn per_turn<T>(entries: &[T], turn: usize) -> &T {
    if entries.len() == 1 {
        &entries[0]
    } else {
        &entries[turn]
    }
}

fn check_distribution(p: &[f64], len: usize, what: &str) -> Result<()> {
    if p.len() != len {
        return Err(config(format!("{what} has {} entries, expected {len}", p.len())));
    }
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(config(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(config(format!("{what} sums to {total}")));
    }
    Ok(())
}

fn check_turns(len: usize, horizon: usize, what: &str) -> Result<()> {
    if len == 1 || len == horizon {
        Ok(())
    } else {
        Err(config(format!("{what} has {len} turn entries for horizon {horizon}")))
    }
}

impl MixedProfile {
    pub fn mediated(&self) -> bool {
        self.mediator.is_some()
    }

    /// Same strategy at every turn, no mediator.
    pub fn stationary(agents: Vec<Vec<f64>>) -> Self {
        MixedProfile {
            window: 1,
            agents: vec![agents],
            mediator: None,
        }
    }

    pub fn validate(&self, spec: &PayoffSpec) -> Result<()> {
        spec.validate()?;
        if self.window == 0 {
            return Err(config("window must be at least 1"));
        }
        let n = spec.num_agents;
        let extra = usize::from(self.mediated());
        check_turns(self.agents.len(), spec.horizon, "agent profile")?;
        for (t, turn) in self.agents.iter().enumerate() {
            if turn.len() != n {
                return Err(config(format!("turn {t} lists {} agents, expected {n}", turn.len())));
            }
            for (i, p) in turn.iter().enumerate() {
                check_distribution(p, spec.num_actions(i) + extra, &format!("agent {i} at turn {t}"))?;
            }
        }
        match &self.mediator {
            None => {}
            Some(MediatorPolicy::ByCoalition { rules }) => {
                check_turns(rules.len(), spec.horizon, "mediator profile")?;
                for (t, turn) in rules.iter().enumerate() {
                    if turn.len() != 1 << n {
                        return Err(config(format!(
                            "mediator turn {t} has {} coalitions, expected {}",
                            turn.len(),
                            1usize << n
                        )));
                    }
                    for (bits, heads) in turn.iter().enumerate().skip(1) {
                        let c = Coalition::from_bits(n, bits);
                        if heads.len() != n {
                            return Err(config(format!("coalition {} needs {n} head entries", c.label())));
                        }
                        for i in c.members() {
                            let what = format!("mediator head {i} for {} at turn {t}", c.label());
                            check_distribution(&heads[i], spec.num_actions(i), &what)?;
                        }
                    }
                }
            }
            Some(MediatorPolicy::BySize { by_size }) => {
                check_turns(by_size.len(), spec.horizon, "mediator profile")?;
                let actions = spec.num_actions(0);
                if (0..n).any(|i| spec.num_actions(i) != actions) {
                    return Err(config("a size-indexed mediator needs equal action sets"));
                }
                for (t, turn) in by_size.iter().enumerate() {
                    if turn.len() != n {
                        return Err(config(format!("mediator turn {t} must list sizes 1..={n}")));
                    }
                    for (m, p) in turn.iter().enumerate() {
                        check_distribution(p, actions, &format!("mediator at size {} turn {t}", m + 1))?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Agent `agent`'s distribution at `turn` given its status, restricted
    /// to legal actions and renormalized.
    pub fn agent_distribution(&self, spec: &PayoffSpec, agent: usize, turn: usize, status: Status) -> Result<Vec<f64>> {
        let p = &per_turn(&self.agents, turn)[agent];
        if !self.mediated() {
            return Ok(p.clone());
        }
        let commit = spec.num_actions(agent);
        let mut out = vec![0.0; p.len()];
        match status {
            Status::Committed => out[commit] = 1.0,
            Status::Free => out.clone_from(p),
            Status::Locked => {
                let mass: f64 = p[..commit].iter().sum();
                if mass <= 0.0 {
                    return Err(contract(format!(
                        "agent {agent} puts no mass on environment actions at turn {turn} but is locked out"
                    )));
                }
                for (o, x) in out.iter_mut().zip(&p[..commit]) {
                    *o = x / mass;
                }
            }
        }
        Ok(out)
    }

    pub fn mediator_distribution(&self, agent: usize, turn: usize, coalition: &Coalition) -> Result<Vec<f64>> {
        if !coalition.contains(agent) {
            return Err(contract(format!(
                "agent {agent} is not in coalition {}",
                coalition.label()
            )));
        }
        match &self.mediator {
            None => Err(contract("profile has no mediator")),
            Some(MediatorPolicy::ByCoalition { rules }) => Ok(per_turn(rules, turn)[coalition.bits()][agent].clone()),
            Some(MediatorPolicy::BySize { by_size }) => Ok(per_turn(by_size, turn)[coalition.size() - 1].clone()),
        }
    }

    /// Copy of the profile with agent `agent` replaced by a pure strategy:
    /// `choices[t]` at every turn.
    pub fn with_pure(&self, spec: &PayoffSpec, agent: usize, choices: &[usize]) -> Self {
        let mut out = self.clone();
        let expanded: Vec<Vec<Vec<f64>>> = (0..spec.horizon).map(|t| per_turn(&self.agents, t).clone()).collect();
        out.agents = expanded;
        let len = spec.num_actions(agent) + usize::from(self.mediated());
        for (t, &c) in choices.iter().enumerate() {
            let mut p = vec![0.0; len];
            p[c] = 1.0;
            out.agents[t][agent] = p;
        }
        out
    }
}

/// Drives [`crate::rollout::sample_episode`] with a fixed profile, for
/// Monte-Carlo checks of the exact expectations.
pub struct ProfilePolicy<'a> {
    pub spec: &'a PayoffSpec,
    pub profile: &'a MixedProfile,
}

impl JointPolicy for ProfilePolicy<'_> {
    fn agent_probs(&self, agent: usize, turn: usize, _: &Observation, status: Status) -> Result<Vec<f64>> {
        self.profile.agent_distribution(self.spec, agent, turn, status)
    }

    fn mediator_probs(&self, agent: usize, turn: usize, _: &Observation, coalition: &Coalition) -> Result<Vec<f64>> {
        self.profile.mediator_distribution(agent, turn, coalition)
    }
}

impl MixedProfile {
    pub fn protocol(&self, spec: &PayoffSpec) -> Result<Protocol> {
        Protocol::new(spec.clone(), self.window, self.mediated())
    }
}

/// Expected undiscounted return of every agent under `profile`.
pub fn expected_payoffs(spec: &PayoffSpec, profile: &MixedProfile) -> Result<Vec<f64>> {
    profile.validate(spec)?;
    match spec.kind {
        GameKind::IterativePgg => Err(Error::Unsupported(
            "exact payoffs for the iterative public goods game".into(),
        )),
        GameKind::OneShotPgg if !matches!(profile.mediator, Some(MediatorPolicy::ByCoalition { .. })) => {
            Ok(pgg_payoffs(spec, profile))
        }
        _ => enumerate_payoffs(spec, profile),
    }
}

/// Exact one-shot PGG payoffs by linearity: each agent's contribution
/// probability, with the coalition size of the others drawn from a
/// Poisson-binomial distribution.
fn pgg_payoffs(spec: &PayoffSpec, profile: &MixedProfile) -> Vec<f64> {
    let n = spec.num_agents;
    let dist = &profile.agents[0];
    let commit: Vec<f64> = dist
        .iter()
        .map(|p| if profile.mediated() { p[2] } else { 0.0 })
        .collect();
    let q: Vec<f64> = match &profile.mediator {
        Some(MediatorPolicy::BySize { by_size }) => by_size[0].iter().map(|p| p[COOPERATE]).collect(),
        _ => vec![0.0; n],
    };
    let contribute: Vec<f64> = (0..n)
        .map(|j| {
            let others = poisson_binomial(commit.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &c)| c));
            let mediated: f64 = others.iter().enumerate().map(|(m, p)| p * q[m]).sum();
            dist[j][COOPERATE] + commit[j] * mediated
        })
        .collect();
    let pool = spec.multiplier / n as f64 * contribute.iter().sum::<f64>();
    contribute.iter().map(|x| pool - x).collect()
}

/// Distribution of the number of successes among independent trials.
pub fn poisson_binomial(probs: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut dist = vec![1.0];
    for p in probs {
        let mut next = vec![0.0; dist.len() + 1];
        for (k, d) in dist.iter().enumerate() {
            next[k] += d * (1.0 - p);
            next[k + 1] += d * p;
        }
        dist = next;
    }
    dist
}

/// Product distribution over joint choices, skipping zero-mass entries.
fn joint_support(dists: &[Vec<f64>]) -> Vec<(Vec<usize>, f64)> {
    let mut out = vec![(Vec::with_capacity(dists.len()), 1.0)];
    for d in dists {
        let mut next = Vec::with_capacity(out.len() * d.len());
        for (prefix, p) in &out {
            for (a, &q) in d.iter().enumerate() {
                if q > 0.0 {
                    let mut v = prefix.clone();
                    v.push(a);
                    next.push((v, p * q));
                }
            }
        }
        out = next;
    }
    out
}

fn enumerate_payoffs(spec: &PayoffSpec, profile: &MixedProfile) -> Result<Vec<f64>> {
    let n = spec.num_agents;
    let per_turn_paths = (0..n)
        .map(|i| ((spec.num_actions(i) + 1) * spec.num_actions(i)) as f64)
        .product::<f64>();
    if per_turn_paths.powi(spec.horizon as i32) > MAX_PATHS {
        return Err(Error::Unsupported(format!(
            "enumerating {n} agents over {} turns",
            spec.horizon
        )));
    }
    let protocol = profile.protocol(spec)?;
    let mut total = vec![0.0; n];
    let state = game::reset(spec, 0)?;
    let commitment = CommitmentState::initial(n, profile.window)?;
    expand(spec, profile, &protocol, &state, &commitment, 1.0, &mut total)?;
    Ok(total)
}

fn expand(
    spec: &PayoffSpec,
    profile: &MixedProfile,
    protocol: &Protocol,
    state: &GameState,
    commitment: &CommitmentState,
    prob: f64,
    total: &mut [f64],
) -> Result<()> {
    if state.terminal {
        return Ok(());
    }
    let n = spec.num_agents;
    let turn = state.turn;
    let dists = (0..n)
        .map(|i| profile.agent_distribution(spec, i, turn, commitment.status[i]))
        .collect::<Result<Vec<_>>>()?;
    let commit_ids: Vec<usize> = (0..n)
        .map(|i| protocol.commit_action(i).unwrap_or(usize::MAX))
        .collect();
    for (choices, p_choice) in joint_support(&dists) {
        let formed = if profile.mediated() {
            form_coalition(&choices, &commit_ids, commitment, turn)?
        } else {
            commitment.clone()
        };
        let coalition = &formed.coalition;
        let heads = (0..n)
            .map(|i| {
                if coalition.contains(i) {
                    profile.mediator_distribution(i, turn, coalition)
                } else {
                    Ok(vec![1.0])
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let own: Vec<Option<usize>> = (0..n).map(|i| (!coalition.contains(i)).then_some(choices[i])).collect();
        for (med, p_med) in joint_support(&heads) {
            let med: Vec<Option<usize>> = (0..n).map(|i| coalition.contains(i).then_some(med[i])).collect();
            let joint = assemble_joint_action(&own, &med, coalition)?;
            let (next, rewards) = game::step(spec, state, &joint)?;
            let p = prob * p_choice * p_med;
            for (t, r) in total.iter_mut().zip(&rewards) {
                *t += p * r;
            }
            expand(spec, profile, protocol, &next, &formed.next_turn(), p, total)?;
        }
    }
    Ok(())
}

/// Pure strategies of `agent`: one choice per turn, any action at window
/// starts and environment actions elsewhere.
fn pure_strategies(spec: &PayoffSpec, profile: &MixedProfile, agent: usize) -> Vec<Vec<usize>> {
    let env = spec.num_actions(agent);
    let mut out = vec![Vec::new()];
    for t in 0..spec.horizon {
        let options = if profile.mediated() && t % profile.window == 0 {
            env + 1
        } else {
            env
        };
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..options).map(move |a| {
                    let mut v = prefix.clone();
                    v.push(a);
                    v
                })
            })
            .collect();
    }
    out
}

/// How much `agent` gains by its best pure deviation from `profile`.
pub fn best_response_gap(spec: &PayoffSpec, profile: &MixedProfile, agent: usize) -> Result<f64> {
    if agent >= spec.num_agents {
        return Err(contract(format!("agent {agent} does not exist")));
    }
    let current = expected_payoffs(spec, profile)?[agent];
    let mut best = current;
    for choices in pure_strategies(spec, profile, agent) {
        let value = expected_payoffs(spec, &profile.with_pure(spec, agent, &choices))?[agent];
        best = best.max(value);
    }
    Ok((best - current).max(0.0))
}

/// Per-agent payoffs of a size-indexed PGG mediator when `m` agents form
/// the coalition and everyone else defects.
fn pgg_member_payoff(big_n: f64, n: f64, m: usize, q: f64) -> f64 {
    q * (n * m as f64 / big_n - 1.0)
}

fn pgg_outsider_payoff(big_n: f64, n: f64, m: usize, q: f64) -> f64 {
    n * m as f64 / big_n * q
}

/// Contribution probabilities `q[m]` of the best symmetric mediator for
/// the one-shot PGG whose coalitions of every size maximize their welfare
/// while no member prefers to leave and no outsider prefers to stay out.
/// Index `m` is the coalition size; `q[0]` is zero.
///
/// Sizes are solved from the full coalition downward; at each size a grid
/// search at resolution `1e-3` is refined by bisection on the feasibility
/// boundary.
pub fn optimal_constrained_mediator_pgg(num_agents: usize, multiplier: f64) -> Result<Vec<f64>> {
    if num_agents < 2 {
        return Err(config("the public goods game needs at least two agents"));
    }
    if !(multiplier.is_finite() && multiplier > 1.0) {
        return Err(Error::Infeasible(format!(
            "with multiplier {multiplier} contributing never pays, even for the full coalition"
        )));
    }
    let big_n = num_agents as f64;
    let mut q = vec![0.0; num_agents + 1];
    q[num_agents] = 1.0;
    const SLACK: f64 = 1e-12;
    for m in (1..num_agents).rev() {
        let member_above = pgg_member_payoff(big_n, multiplier, m + 1, q[m + 1]);
        // outsiders must not prefer staying out, and members need a
        // non-negative payoff so that the next size down can still be 0
        let feasible = |x: f64| {
            pgg_outsider_payoff(big_n, multiplier, m, x) <= member_above + SLACK
                && pgg_member_payoff(big_n, multiplier, m, x) >= -SLACK
        };
        let welfare = |x: f64| m as f64 * pgg_member_payoff(big_n, multiplier, m, x);
        let mut best = 0.0;
        let steps = 1000;
        for k in 0..=steps {
            let x = k as f64 / steps as f64;
            if feasible(x) && welfare(x) >= welfare(best) - SLACK {
                best = x;
            }
        }
        let upper = (best + 1.0 / steps as f64).min(1.0);
        if best < 1.0 && !feasible(upper) && welfare(upper) >= welfare(best) - SLACK {
            let (mut lo, mut hi) = (best, upper);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if feasible(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            best = lo;
        }
        q[m] = best;
    }
    Ok(q)
}

/// Full-commitment profile for the one-shot PGG under a size-indexed
/// mediator contributing with probability `q[m]`.
pub fn pgg_full_commit_profile(num_agents: usize, q: &[f64]) -> MixedProfile {
    MixedProfile {
        window: 1,
        agents: vec![vec![vec![0.0, 0.0, 1.0]; num_agents]],
        mediator: Some(MediatorPolicy::BySize {
            by_size: vec![q[1..].iter().map(|&x| vec![1.0 - x, x]).collect()],
        }),
    }
}

/// Bounds that map per-agent returns onto `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Mean per-agent return when everybody defects.
    pub min: f64,
    /// Mean per-agent return of the best joint outcome.
    pub max: f64,
}

impl Normalization {
    pub fn normalize(&self, value: f64) -> f64 {
        (value - self.min) / (self.max - self.min)
    }
}

pub fn normalization_constants(spec: &PayoffSpec) -> Result<Normalization> {
    spec.validate()?;
    let n = spec.num_agents as f64;
    let rollout = |action: usize| -> Result<f64> {
        let mut state = game::reset(spec, 0)?;
        let mut total = 0.0;
        while !state.terminal {
            let (next, r) = game::step(spec, &state, &vec![action; spec.num_agents])?;
            total += r.iter().sum::<f64>() / n;
            state = next;
        }
        Ok(total)
    };
    let min = rollout(DEFECT)?;
    let max = match spec.kind {
        GameKind::MatrixGame => spec
            .tables
            .iter()
            .map(|t| {
                t.rewards
                    .iter()
                    .map(|r| r.iter().sum::<f64>() / n)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum(),
        GameKind::OneShotPgg | GameKind::IterativePgg => rollout(COOPERATE)?,
    };
    if max.is_nan() || min.is_nan() || max <= min {
        return Err(config(format!("degenerate normalization: min {min}, max {max}")));
    }
    Ok(Normalization { min, max })
}
