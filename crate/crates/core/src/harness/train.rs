//! Seeded training of one run.

use std::cell::RefCell;
use std::collections::HashMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::report::{Evaluation, LambdaPoint, MediatorEntry, SeedReport, TurnPolicy};
use crate::agents::{agent_records, AgentLearner};
use crate::error::{contract, Result};
use crate::game::{self, GameKind, GameState, Observation, PayoffSpec, COOPERATE, DEFECT, SACRIFICE};
use crate::mediation::{Coalition, CoalitionEncoding, Status};
use crate::mediator::MediatorLearner;
use crate::oracle::normalization_constants;
use crate::rollout::{sample_episode, Episode, JointPolicy, Protocol};

type Key = (usize, Vec<u64>, usize);

fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Current policies of all learners, memoized per distinct input. The
/// cache is only valid while parameters are unchanged, so a fresh policy is
/// built after every update.
pub struct LearnedPolicy<'a> {
    pub protocol: &'a Protocol,
    pub agents: &'a [AgentLearner],
    pub mediator: Option<&'a MediatorLearner>,
    agent_cache: RefCell<HashMap<Key, Vec<f64>>>,
    mediator_cache: RefCell<HashMap<Key, Vec<f64>>>,
}

impl<'a> LearnedPolicy<'a> {
    pub fn new(protocol: &'a Protocol, agents: &'a [AgentLearner], mediator: Option<&'a MediatorLearner>) -> Self {
        LearnedPolicy {
            protocol,
            agents,
            mediator,
            agent_cache: RefCell::default(),
            mediator_cache: RefCell::default(),
        }
    }
}

impl JointPolicy for LearnedPolicy<'_> {
    fn agent_probs(&self, agent: usize, _turn: usize, obs: &Observation, status: Status) -> Result<Vec<f64>> {
        let key = (agent, bits(obs), (status.value() + 1.0) as usize);
        if let Some(p) = self.agent_cache.borrow().get(&key) {
            return Ok(p.clone());
        }
        let p = self.agents[agent].policy(obs, &self.protocol.agent_mask(agent, status))?;
        self.agent_cache.borrow_mut().insert(key, p.clone());
        Ok(p)
    }

    fn mediator_probs(
        &self,
        agent: usize,
        _turn: usize,
        env_obs: &Observation,
        coalition: &Coalition,
    ) -> Result<Vec<f64>> {
        let mediator = self
            .mediator
            .ok_or_else(|| contract("mediator queried in an unmediated run"))?;
        let key = (agent, bits(env_obs), coalition.bits());
        if let Some(p) = self.mediator_cache.borrow().get(&key) {
            return Ok(p.clone());
        }
        let p = mediator.actor.probs(agent, env_obs, coalition)?;
        self.mediator_cache.borrow_mut().insert(key, p.clone());
        Ok(p)
    }
}

/// Learner state of one seed.
pub struct Trainer {
    pub config: RunConfig,
    pub protocol: Protocol,
    pub agents: Vec<AgentLearner>,
    pub mediator: Option<MediatorLearner>,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
}

impl Trainer {
    pub fn new(config: &RunConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let spec = config.spec();
        let med_cfg = config.mediator_config();
        let protocol = Protocol::new(spec.clone(), config.mediation.k, med_cfg.is_some())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = config.harness.gamma;
        let agents = (0..spec.num_agents)
            .map(|i| {
                AgentLearner::new(
                    i,
                    protocol.obs_len(),
                    protocol.agent_actions(i),
                    &config.agents,
                    gamma,
                    &mut rng,
                )
            })
            .collect();
        let mediator = med_cfg
            .map(|c| MediatorLearner::new(&spec, c, gamma, &mut rng))
            .transpose()?;
        Ok(Trainer {
            config: config.clone(),
            protocol,
            agents,
            mediator,
            rng,
            iteration: 0,
        })
    }

    pub fn sample(&mut self, episodes: usize) -> Result<Vec<Episode>> {
        let policy = LearnedPolicy::new(&self.protocol, &self.agents, self.mediator.as_ref());
        (0..episodes)
            .map(|_| sample_episode(&self.protocol, &policy, &mut self.rng))
            .collect()
    }

    /// One iteration: sample a batch, then update agents and mediator.
    pub fn step(&mut self) -> Result<Vec<Episode>> {
        let batch = self.sample(self.config.harness.batch_size)?;
        let it = self.iteration;
        let gamma = self.config.harness.gamma;
        for agent in &mut self.agents {
            let records: Vec<_> = batch
                .iter()
                .flat_map(|ep| agent_records(&self.protocol, ep, agent.index, gamma))
                .collect();
            let beta = agent.entropy.coef(it);
            agent.update(&records, beta)?;
        }
        if let Some(m) = &mut self.mediator {
            let beta = m.config.learner.entropy.coef(it);
            m.update(&batch, beta)?;
        }
        self.iteration += 1;
        Ok(batch)
    }

    fn lambda_point(&self) -> Option<LambdaPoint> {
        let m = self.mediator.as_ref()?;
        (m.config.mode.uses_ic() || m.config.mode.uses_e()).then(|| LambdaPoint {
            iteration: self.iteration,
            log_ic: m.lagrange.log_ic.clone(),
            log_e: m.lagrange.log_e.clone(),
        })
    }

    pub fn evaluate(&mut self) -> Result<Evaluation> {
        let episodes = self.config.harness.eval_episodes;
        let batch = self.sample(episodes)?;
        let spec = &self.protocol.spec;
        let n = spec.num_agents;
        let norm = normalization_constants(spec)?;

        let mut returns = vec![0.0; n];
        let mut commits = vec![0usize; n];
        let mut decisions = 0usize;
        let mut actions: Vec<Vec<f64>> = (0..n).map(|i| vec![0.0; spec.num_actions(i)]).collect();
        let mut steps = 0usize;
        let mut full_steps = 0usize;
        let mut joint_counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for ep in &batch {
            for (r, x) in returns.iter_mut().zip(ep.returns()) {
                *r += x / episodes as f64;
            }
            for t in ep.window_starts() {
                decisions += 1;
                for (i, c) in commits.iter_mut().enumerate() {
                    if ep.steps[t].coalition.contains(i) {
                        *c += 1;
                    }
                }
            }
            for s in &ep.steps {
                steps += 1;
                for (i, &a) in s.joint_action.iter().enumerate() {
                    actions[i][a] += 1.0;
                }
                if s.coalition.is_full() {
                    full_steps += 1;
                    *joint_counts.entry(s.joint_action.clone()).or_default() += 1;
                }
            }
        }
        for row in &mut actions {
            row.iter_mut().for_each(|x| *x /= steps as f64);
        }
        let labels = action_labels(spec, self.protocol.mediated);
        let mut full_coalition_joint = Vec::new();
        if self.protocol.mediated && n <= 3 && full_steps > 0 {
            let joints = joint_actions(spec);
            for joint in joints {
                let count = joint_counts.get(&joint).copied().unwrap_or(0);
                let label = joint
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| short_label(&labels[i][a]))
                    .collect::<Vec<_>>()
                    .join(",");
                full_coalition_joint.push((format!("({label})"), count as f64 / full_steps as f64));
            }
        }
        let mean_return = returns.iter().sum::<f64>() / n as f64;
        let (log_lambda_ic, log_lambda_e) = match &self.mediator {
            Some(m) if m.config.mode.uses_ic() || m.config.mode.uses_e() => {
                (Some(m.lagrange.log_ic.clone()), Some(m.lagrange.log_e.clone()))
            }
            _ => (None, None),
        };
        Ok(Evaluation {
            episodes,
            horizon: self.protocol.spec.horizon,
            normalized_reward: norm.normalize(mean_return),
            social_welfare: returns.iter().sum(),
            mean_returns: returns,
            action_labels: labels,
            policies: self.turn_policies()?,
            empirical_commit: commits.iter().map(|&c| c as f64 / decisions as f64).collect(),
            empirical_actions: actions,
            mediator: self.mediator_entries()?,
            full_coalition_rate: full_steps as f64 / steps as f64,
            full_coalition_joint,
            log_lambda_ic,
            log_lambda_e,
        })
    }

    /// Agent policies at commitment turns of the undeviated path. Only
    /// matrix games have states independent of past play; other games
    /// report the first turn.
    fn turn_policies(&self) -> Result<Vec<TurnPolicy>> {
        let spec = &self.protocol.spec;
        let turns: Vec<usize> = match spec.kind {
            GameKind::MatrixGame => (0..spec.horizon).step_by(self.protocol.window).collect(),
            _ => vec![0],
        };
        let start = game::reset(spec, 0)?;
        turns
            .into_iter()
            .map(|turn| {
                let state = GameState { turn, ..start.clone() };
                let agents = (0..spec.num_agents)
                    .map(|i| {
                        let obs = self.protocol.observe(&spec.env_features(&state, i), Status::Free);
                        self.agents[i].policy(&obs, &self.protocol.agent_mask(i, Status::Free))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(TurnPolicy { turn, agents })
            })
            .collect()
    }

    fn mediator_entries(&self) -> Result<Vec<MediatorEntry>> {
        let Some(m) = &self.mediator else {
            return Ok(Vec::new());
        };
        let spec = &self.protocol.spec;
        let n = spec.num_agents;
        let state = game::reset(spec, 0)?;
        let obs: Vec<Observation> = (0..n).map(|i| spec.env_features(&state, i)).collect();
        let mut out = Vec::new();
        match m.actor.encoding {
            CoalitionEncoding::Fraction => {
                for size in 1..=n {
                    let members: Vec<usize> = (0..size).collect();
                    let c = Coalition::from_members(n, &members);
                    out.push(MediatorEntry {
                        coalition: format!("|C|={size}"),
                        agent: None,
                        probs: m.actor.probs(0, &obs[0], &c)?,
                    });
                }
            }
            CoalitionEncoding::OneHot if n <= 4 => {
                for b in 1..(1usize << n) {
                    let c = Coalition::from_bits(n, b);
                    for i in c.members() {
                        out.push(MediatorEntry {
                            coalition: c.label(),
                            agent: Some(i),
                            probs: m.actor.probs(i, &obs[i], &c)?,
                        });
                    }
                }
            }
            CoalitionEncoding::OneHot => {
                let c = Coalition::full(n);
                for (i, o) in obs.iter().enumerate() {
                    out.push(MediatorEntry {
                        coalition: c.label(),
                        agent: Some(i),
                        probs: m.actor.probs(i, o, &c)?,
                    });
                }
            }
        }
        Ok(out)
    }
}

fn joint_actions(spec: &PayoffSpec) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for i in 0..spec.num_agents {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..spec.num_actions(i)).map(move |a| {
                    let mut v = p.clone();
                    v.push(a);
                    v
                })
            })
            .collect();
    }
    out
}

fn short_label(label: &str) -> &str {
    &label[..1]
}

pub fn action_labels(spec: &PayoffSpec, mediated: bool) -> Vec<Vec<String>> {
    (0..spec.num_agents)
        .map(|i| {
            let mut v: Vec<String> = (0..spec.num_actions(i))
                .map(|a| match a {
                    DEFECT => "defect".to_string(),
                    COOPERATE => "cooperate".to_string(),
                    SACRIFICE => "sacrifice".to_string(),
                    _ => format!("a{a}"),
                })
                .collect();
            if mediated {
                v.push("commit".into());
            }
            v
        })
        .collect()
}

/// Train one seed and evaluate the final policies. Failures during
/// training are reported in the result rather than returned, so that
/// sweeps can record them; only an invalid configuration is an error.
pub fn train(config: &RunConfig, seed: u64) -> Result<SeedReport> {
    let started = Instant::now();
    let mut trainer = Trainer::new(config, seed)?;
    let h = &config.harness;
    let mut lambda_trace: Vec<LambdaPoint> = trainer.lambda_point().into_iter().collect();
    let mut aborted = None;
    while trainer.iteration < h.iterations {
        match trainer.step() {
            Ok(batch) => {
                let it = trainer.iteration;
                if let Some(p) = trainer.lambda_point() {
                    log::trace!("seed {seed} iter {it} log_ic {:?} log_e {:?}", p.log_ic, p.log_e);
                    if it % h.log_interval == 0 || it == h.iterations {
                        lambda_trace.push(p);
                    }
                }
                if it % h.log_interval == 0 {
                    let mean: f64 = batch.iter().map(|e| e.returns().iter().sum::<f64>()).sum::<f64>()
                        / (batch.len() * config.game.num_agents) as f64;
                    log::info!("seed {seed} iter {it}/{}: mean return {mean:.4}", h.iterations);
                }
            }
            Err(e) => {
                log::error!("seed {seed} aborted at iteration {}: {e}", trainer.iteration);
                aborted = Some(format!("iteration {}: {e}", trainer.iteration));
                break;
            }
        }
    }
    let evaluation = if aborted.is_none() {
        match trainer.evaluate() {
            Ok(e) => Some(e),
            Err(e) => {
                aborted = Some(format!("evaluation: {e}"));
                None
            }
        }
    } else {
        None
    };
    Ok(SeedReport {
        seed,
        iterations_completed: trainer.iteration,
        aborted,
        wall_clock_s: started.elapsed().as_secs_f64(),
        lambda_trace,
        evaluation,
    })
}
