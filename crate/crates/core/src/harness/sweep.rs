//! Multi-seed runs and their aggregation.

use serde::{Deserialize, Serialize};

use super::config::{EnvId, MediatorSetting, RunConfig};
use super::report::SeedReport;
use super::train::train;
use crate::error::{config, Result};

/// Environment variable overriding the number of parallel seed workers.
pub const WORKERS_ENV: &str = "MEDIATED_MARL_WORKERS";

/// Mean and spread of one metric over the seeds that completed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    pub agent: Option<usize>,
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub env: EnvId,
    pub mediator: MediatorSetting,
    pub k: usize,
    pub num_agents: usize,
    pub rows: Vec<AggregateRow>,
    /// Seeds that aborted, excluded from `rows`.
    pub failed: Vec<u64>,
    pub per_seed: Vec<SeedReport>,
}

impl SweepReport {
    pub fn row(&self, metric: &str, agent: Option<usize>) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.metric == metric && r.agent == agent)
    }

    pub fn mean(&self, metric: &str, agent: Option<usize>) -> Option<f64> {
        self.row(metric, agent).map(|r| r.mean)
    }
}

/// Aggregate metrics over completed seeds, keeping first-seen order.
pub fn aggregate(reports: &[SeedReport]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, Option<usize>)> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for r in reports.iter().filter(|r| r.aborted.is_none()) {
        for m in r.metrics() {
            let key = (m.name, m.agent);
            let idx = match keys.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    keys.push(key);
                    values.push(Vec::new());
                    keys.len() - 1
                }
            };
            values[idx].push(m.value);
        }
    }
    keys.into_iter()
        .zip(values)
        .map(|((metric, agent), v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            AggregateRow {
                metric,
                agent,
                mean,
                std,
                seeds: v.len(),
            }
        })
        .collect()
}

/// Worker count: the override variable if set, otherwise rayon's default.
pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&w| w > 0)
            .ok_or_else(|| config(format!("{WORKERS_ENV} must be a positive integer, got '{v}'"))),
        Err(_) => Ok(rayon::current_num_threads()),
    }
}

/// Train every seed of `config`, in parallel across seeds.
pub fn sweep(config: &RunConfig) -> Result<SweepReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count()?)
        .build()
        .map_err(|e| crate::Error::Config(e.to_string()))?;
    let per_seed: Vec<SeedReport> = pool.install(|| {
        use rayon::prelude::*;
        config
            .harness
            .seeds
            .par_iter()
            .map(|&seed| train(config, seed))
            .collect::<Result<Vec<_>>>()
    })?;
    let failed = per_seed
        .iter()
        .filter(|r| r.aborted.is_some())
        .map(|r| r.seed)
        .collect();
    Ok(SweepReport {
        env: config.game.env,
        mediator: config.mediator.mode,
        k: config.mediation.k,
        num_agents: config.game.num_agents,
        rows: aggregate(&per_seed),
        failed,
        per_seed,
    })
}
