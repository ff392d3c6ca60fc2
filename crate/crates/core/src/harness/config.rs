//! Run configuration: a preset per environment, overlaid by an optional
//! TOML file and then by command-line flags.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::LearnerConfig;
use crate::approx::EntropySchedule;
use crate::error::{config, Result};
use crate::game::PayoffSpec;
use crate::mediator::{MediatorConfig, ObjectiveMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvId {
    #[serde(rename = "pd")]
    Pd,
    #[serde(rename = "pds")]
    Pds,
    #[serde(rename = "pd2")]
    Pd2,
    #[serde(rename = "pgg")]
    Pgg,
    #[serde(rename = "pgg-iter")]
    PggIter,
}

impl EnvId {
    pub const ALL: [EnvId; 5] = [EnvId::Pd, EnvId::Pds, EnvId::Pd2, EnvId::Pgg, EnvId::PggIter];

    pub fn name(self) -> &'static str {
        match self {
            EnvId::Pd => "pd",
            EnvId::Pds => "pds",
            EnvId::Pd2 => "pd2",
            EnvId::Pgg => "pgg",
            EnvId::PggIter => "pgg-iter",
        }
    }

    pub fn is_pgg(self) -> bool {
        matches!(self, EnvId::Pgg | EnvId::PggIter)
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| config(format!("unknown environment '{s}', expected pd|pds|pd2|pgg|pgg-iter")))
    }
}

/// Whether a mediator is present and which objective it optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediatorSetting {
    None,
    Naive,
    Ic,
    E,
    Constrained,
}

impl MediatorSetting {
    pub fn objective(self) -> Option<ObjectiveMode> {
        match self {
            MediatorSetting::None => None,
            MediatorSetting::Naive => Some(ObjectiveMode::Naive),
            MediatorSetting::Ic => Some(ObjectiveMode::Ic),
            MediatorSetting::E => Some(ObjectiveMode::E),
            MediatorSetting::Constrained => Some(ObjectiveMode::Constrained),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MediatorSetting::None => "none",
            MediatorSetting::Naive => "naive",
            MediatorSetting::Ic => "ic",
            MediatorSetting::E => "e",
            MediatorSetting::Constrained => "constrained",
        }
    }
}

impl fmt::Display for MediatorSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MediatorSetting {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MediatorSetting::None),
            "naive" => Ok(MediatorSetting::Naive),
            "ic" => Ok(MediatorSetting::Ic),
            "e" => Ok(MediatorSetting::E),
            "constrained" => Ok(MediatorSetting::Constrained),
            _ => Err(config(format!(
                "unknown mediator '{s}', expected none|naive|constrained"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    Table,
}

impl FromStr for OutputFormat {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "table" => Ok(OutputFormat::Table),
            _ => Err(config(format!("unknown format '{s}', expected csv|json|table"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameSection {
    pub env: EnvId,
    pub num_agents: usize,
    /// Public-good multiplier `n`; unused by matrix games.
    pub multiplier: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediationSection {
    pub k: usize,
    pub symmetric_mediator: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediatorSection {
    pub mode: MediatorSetting,
    #[serde(flatten)]
    pub learner: LearnerConfig,
    pub lambda_lr: f64,
    pub log_lambda_bounds: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnessSection {
    pub iterations: u64,
    pub batch_size: usize,
    pub gamma: f64,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub log_interval: u64,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub game: GameSection,
    pub mediation: MediationSection,
    pub agents: LearnerConfig,
    pub mediator: MediatorSection,
    pub harness: HarnessSection,
}

fn learner(lr_critic: f64, lr_actor: f64, hidden: usize, entropy: EntropySchedule) -> LearnerConfig {
    LearnerConfig {
        lr_actor,
        lr_critic,
        hidden,
        entropy,
    }
}

impl RunConfig {
    /// Hyperparameters reported for each environment.
    pub fn preset(env: EnvId) -> Self {
        let (num_agents, multiplier) = match env {
            EnvId::Pgg | EnvId::PggIter => (3, 2.0),
            _ => (2, 0.0),
        };
        let (iterations, agents, mediator) = match env {
            EnvId::Pd | EnvId::Pd2 => {
                let decay = if env == EnvId::Pd { 0.0005 } else { 0.0007 };
                let entropy = EntropySchedule::linear(1.0, decay, 0.001);
                (2000, learner(8e-4, 4e-4, 8, entropy), learner(1e-3, 8e-4, 8, entropy))
            }
            EnvId::Pds => {
                let entropy = EntropySchedule::linear(0.5, 0.00004, 0.01);
                (
                    10000,
                    learner(1e-3, 1e-3, 16, entropy),
                    learner(1e-3, 1e-3, 32, entropy),
                )
            }
            EnvId::Pgg => {
                let entropy = EntropySchedule::exponential(0.5, 20000, 0.01);
                (
                    20000,
                    learner(1e-3, 1e-3, 16, entropy),
                    learner(1e-3, 1e-3, 16, entropy),
                )
            }
            EnvId::PggIter => {
                let entropy = EntropySchedule::exponential(0.2, 10000, 0.001);
                (
                    20000,
                    learner(1e-3, 5e-4, 16, entropy),
                    learner(1e-3, 5e-4, 16, entropy),
                )
            }
        };
        let seeds = if env.is_pgg() { 10 } else { 50 };
        RunConfig {
            game: GameSection {
                env,
                num_agents,
                multiplier,
            },
            mediation: MediationSection {
                k: 1,
                symmetric_mediator: env == EnvId::Pgg,
            },
            agents,
            mediator: MediatorSection {
                mode: MediatorSetting::Naive,
                learner: mediator,
                lambda_lr: 1e-3,
                log_lambda_bounds: [-4.0, 4.0],
            },
            harness: HarnessSection {
                iterations,
                batch_size: 128,
                gamma: 0.99,
                seeds: (0..seeds).collect(),
                eval_episodes: 100,
                log_interval: 100,
                out: None,
                format: OutputFormat::Table,
            },
        }
    }

    /// Preset for `env` with the values of a TOML document laid over it.
    /// `env` overrides the document's `[game] env`.
    pub fn from_toml(text: &str, env: Option<EnvId>) -> Result<Self> {
        let mut doc: toml::Table = text.parse::<toml::Table>()?;
        let file_env = doc
            .get("game")
            .and_then(|g| g.get("env"))
            .and_then(|e| e.as_str())
            .map(EnvId::from_str)
            .transpose()?;
        let env = env
            .or(file_env)
            .ok_or_else(|| config("no environment given: set [game] env or pass --env"))?;
        if let Some(toml::Value::Table(game)) = doc.get_mut("game") {
            game.insert("env".into(), toml::Value::String(env.name().into()));
        }
        if let Some(toml::Value::Table(h)) = doc.get_mut("harness") {
            // a bare count is shorthand for seeds 0..count
            if let Some(toml::Value::Integer(count)) = h.get("seeds").cloned() {
                let list = (0..count.max(0)).map(toml::Value::Integer).collect();
                h.insert("seeds".into(), toml::Value::Array(list));
            }
        }
        let mut base = toml::Table::try_from(RunConfig::preset(env)).map_err(|e| config(e.to_string()))?;
        merge(&mut base, doc)?;
        let cfg: RunConfig = toml::Value::Table(base).try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn spec(&self) -> PayoffSpec {
        match self.game.env {
            EnvId::Pd => PayoffSpec::prisoners_dilemma(),
            EnvId::Pds => PayoffSpec::pd_with_sacrifice(),
            EnvId::Pd2 => PayoffSpec::two_step_pd(),
            EnvId::Pgg => PayoffSpec::public_goods(self.game.num_agents, self.game.multiplier),
            EnvId::PggIter => PayoffSpec::iterative_public_goods(self.game.num_agents, self.game.multiplier),
        }
    }

    pub fn mediator_config(&self) -> Option<MediatorConfig> {
        self.mediator.mode.objective().map(|mode| MediatorConfig {
            learner: self.mediator.learner,
            mode,
            symmetric: self.mediation.symmetric_mediator,
            lambda_lr: self.mediator.lambda_lr,
            log_lambda_bounds: self.mediator.log_lambda_bounds,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.spec();
        spec.validate()?;
        if !self.game.env.is_pgg() && self.game.num_agents != 2 {
            return Err(config(format!("{} is a two-player game", self.game.env)));
        }
        if self.mediation.k == 0 {
            return Err(config("k must be at least 1"));
        }
        if self.mediation.symmetric_mediator && (0..spec.num_agents).any(|i| spec.num_actions(i) != spec.num_actions(0))
        {
            return Err(config(
                "a symmetric mediator needs every agent to have the same actions",
            ));
        }
        for (name, l) in [("agents", &self.agents), ("mediator", &self.mediator.learner)] {
            if !(l.lr_actor > 0.0 && l.lr_critic > 0.0 && l.lr_actor.is_finite() && l.lr_critic.is_finite()) {
                return Err(config(format!("{name} learning rates must be positive")));
            }
            if l.hidden == 0 {
                return Err(config(format!("{name} hidden size must be positive")));
            }
            l.entropy.validate()?;
        }
        let [lo, hi] = self.mediator.log_lambda_bounds;
        if !(lo <= 0.0 && 0.0 <= hi) {
            return Err(config("log_lambda_bounds must contain 0"));
        }
        if !(self.mediator.lambda_lr >= 0.0 && self.mediator.lambda_lr.is_finite()) {
            return Err(config("lambda_lr must be non-negative"));
        }
        let h = &self.harness;
        if h.batch_size == 0 {
            return Err(config("batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&h.gamma) {
            return Err(config("gamma must lie in [0, 1]"));
        }
        if h.seeds.is_empty() {
            return Err(config("at least one seed is required"));
        }
        if h.eval_episodes == 0 {
            return Err(config("eval_episodes must be positive"));
        }
        if h.log_interval == 0 {
            return Err(config("log_interval must be positive"));
        }
        Ok(())
    }
}

/// Recursively overlay `over` onto `base`, rejecting unknown keys.
fn merge(base: &mut toml::Table, over: toml::Table) -> Result<()> {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o)?,
            (Some(slot), v) => *slot = v,
            (None, v) => {
                // optional fields are absent from the serialized preset
                if key == "out" {
                    base.insert(key, v);
                } else {
                    return Err(config(format!("unknown configuration key '{key}'")));
                }
            }
        }
    }
    Ok(())
}
