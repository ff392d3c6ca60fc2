//! Per-seed results and their flattening into named metrics.

use serde::{Deserialize, Serialize};

/// Policy of every agent at one turn, in the state reached without any
/// deviation, with commitment free.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnPolicy {
    pub turn: usize,
    pub agents: Vec<Vec<f64>>,
}

/// Mediator policy for one coalition (or coalition size) at the first turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediatorEntry {
    /// Coalition label such as `[1,0]`, or `|C|=2` for a symmetric mediator.
    pub coalition: String,
    /// `None` for a symmetric mediator, whose heads are identical.
    pub agent: Option<usize>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub iteration: u64,
    pub log_ic: Vec<f64>,
    pub log_e: Vec<f64>,
}

/// Statistics of the final policies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub episodes: usize,
    /// Turns per episode; multi-turn games label policies by turn.
    pub horizon: usize,
    pub normalized_reward: f64,
    pub mean_returns: Vec<f64>,
    /// Mean over episodes of the summed returns.
    pub social_welfare: f64,
    /// Names of each agent's actions, commit last when mediated.
    pub action_labels: Vec<Vec<String>>,
    pub policies: Vec<TurnPolicy>,
    /// Fraction of commitment decisions on which each agent committed.
    pub empirical_commit: Vec<f64>,
    /// Frequency of each executed environment action, per agent.
    pub empirical_actions: Vec<Vec<f64>>,
    pub mediator: Vec<MediatorEntry>,
    /// Fraction of steps played by the full coalition.
    pub full_coalition_rate: f64,
    /// Empirical joint action distribution on full-coalition steps, keyed
    /// by action labels. Empty for more than three agents.
    pub full_coalition_joint: Vec<(String, f64)>,
    pub log_lambda_ic: Option<Vec<f64>>,
    pub log_lambda_e: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub iterations_completed: u64,
    /// Diagnostics when training stopped early.
    pub aborted: Option<String>,
    pub wall_clock_s: f64,
    /// Multipliers at every logging interval and at the end.
    pub lambda_trace: Vec<LambdaPoint>,
    pub evaluation: Option<Evaluation>,
}

/// One named scalar, optionally tied to an agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub agent: Option<usize>,
    pub value: f64,
}

fn metric(name: impl Into<String>, agent: Option<usize>, value: f64) -> Metric {
    Metric {
        name: name.into(),
        agent,
        value,
    }
}

impl Evaluation {
    /// Flat metric list in a fixed order.
    pub fn metrics(&self) -> Vec<Metric> {
        let mut out = vec![
            metric("normalized_reward", None, self.normalized_reward),
            metric("social_welfare", None, self.social_welfare),
        ];
        for (i, r) in self.mean_returns.iter().enumerate() {
            out.push(metric("return", Some(i), *r));
        }
        let single_turn = self.horizon == 1;
        for tp in &self.policies {
            for (i, probs) in tp.agents.iter().enumerate() {
                for (a, p) in probs.iter().enumerate() {
                    let label = &self.action_labels[i][a];
                    let name = if single_turn {
                        format!("pi({label})")
                    } else {
                        format!("pi({label}|t={})", tp.turn)
                    };
                    out.push(metric(name, Some(i), *p));
                }
            }
        }
        let mediated = self
            .action_labels
            .first()
            .is_some_and(|l| l.last().map(String::as_str) == Some("commit"));
        if mediated {
            for (i, c) in self.empirical_commit.iter().enumerate() {
                out.push(metric("emp(commit)", Some(i), *c));
            }
        }
        for (i, freqs) in self.empirical_actions.iter().enumerate() {
            for (a, f) in freqs.iter().enumerate() {
                out.push(metric(format!("emp({})", self.action_labels[i][a]), Some(i), *f));
            }
        }
        for entry in &self.mediator {
            for (a, p) in entry.probs.iter().enumerate() {
                let label = &self.action_labels[entry.agent.unwrap_or(0)][a];
                out.push(metric(format!("pi_M({label}|{})", entry.coalition), entry.agent, *p));
            }
        }
        if mediated {
            out.push(metric("full_coalition_rate", None, self.full_coalition_rate));
        }
        for (label, p) in &self.full_coalition_joint {
            out.push(metric(format!("P_full{label}"), None, *p));
        }
        for (name, values) in [
            ("log_lambda_ic", &self.log_lambda_ic),
            ("log_lambda_e", &self.log_lambda_e),
        ] {
            if let Some(v) = values {
                for (i, x) in v.iter().enumerate() {
                    out.push(metric(name, Some(i), *x));
                }
            }
        }
        out
    }
}

impl SeedReport {
    /// Metrics of a completed run; empty when the seed aborted.
    pub fn metrics(&self) -> Vec<Metric> {
        match (&self.aborted, &self.evaluation) {
            (None, Some(e)) => {
                let mut m = e.metrics();
                m.push(metric("wall_clock_s", None, self.wall_clock_s));
                m
            }
            _ => Vec::new(),
        }
    }

    /// Value of metric `name` for `agent`, if reported.
    pub fn get(&self, name: &str, agent: Option<usize>) -> Option<f64> {
        self.evaluation
            .as_ref()?
            .metrics()
            .into_iter()
            .find(|m| m.name == name && m.agent == agent)
            .map(|m| m.value)
    }
}
