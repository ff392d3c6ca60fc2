use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mediated_marl::game::PayoffSpec;
use mediated_marl::harness::{emit, render, sweep, EnvId, MediatorSetting, OutputFormat, RunConfig};
use mediated_marl::oracle::{
    best_response_gap, expected_payoffs, normalization_constants, optimal_constrained_mediator_pgg, MixedProfile,
};
use mediated_marl::Result;

#[derive(Parser)]
#[command(
    name = "mediated-marl",
    version,
    about = "Train and analyse mediated multi-agent learners"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; without it the environment's preset is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment: pd, pds, pd2, pgg or pgg-iter.
    #[arg(long)]
    env: Option<EnvId>,
    /// Mediator: none, naive, ic, e or constrained.
    #[arg(long)]
    mediator: Option<MediatorSetting>,
    /// Commitment window length.
    #[arg(long)]
    k: Option<usize>,
    /// Number of seeds, numbered from 0.
    #[arg(long)]
    seeds: Option<u64>,
    /// Training iterations per seed.
    #[arg(long)]
    iters: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format: csv, json or table.
    #[arg(long)]
    format: Option<OutputFormat>,
}

#[derive(Subcommand)]
enum Command {
    /// Train agents (and a mediator) over several seeds and report metrics.
    Run(RunArgs),
    /// Exact analysis of a fixed strategy profile.
    Oracle {
        #[arg(long)]
        env: EnvId,
        /// JSON strategy profile; without it only the game's constants are printed.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Players in the public goods games.
        #[arg(long, default_value_t = 3)]
        num_agents: usize,
        /// Public goods multiplier.
        #[arg(long, default_value_t = 2.0)]
        multiplier: f64,
    },
}

fn run_config(args: RunArgs) -> Result<RunConfig> {
    let RunArgs {
        config,
        env,
        mediator,
        k,
        seeds,
        iters,
        out,
        format,
    } = args;
    let mut cfg = match config {
        Some(path) => RunConfig::from_toml(&std::fs::read_to_string(path)?, env)?,
        None => {
            RunConfig::preset(env.ok_or_else(|| mediated_marl::Error::Config("pass --config FILE or --env".into()))?)
        }
    };
    if let Some(m) = mediator {
        cfg.mediator.mode = m;
    }
    if let Some(k) = k {
        cfg.mediation.k = k;
    }
    if let Some(s) = seeds {
        cfg.harness.seeds = (0..s).collect();
    }
    if let Some(i) = iters {
        cfg.harness.iterations = i;
    }
    if out.is_some() {
        cfg.harness.out = out;
    }
    if let Some(f) = format {
        cfg.harness.format = f;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn spec_for(env: EnvId, num_agents: usize, multiplier: f64) -> PayoffSpec {
    match env {
        EnvId::Pd => PayoffSpec::prisoners_dilemma(),
        EnvId::Pds => PayoffSpec::pd_with_sacrifice(),
        EnvId::Pd2 => PayoffSpec::two_step_pd(),
        EnvId::Pgg => PayoffSpec::public_goods(num_agents, multiplier),
        EnvId::PggIter => PayoffSpec::iterative_public_goods(num_agents, multiplier),
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let cells: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", cells.join(", "))
}

fn oracle(env: EnvId, profile: Option<PathBuf>, num_agents: usize, multiplier: f64) -> Result<()> {
    let spec = spec_for(env, num_agents, multiplier);
    spec.validate()?;
    let norm = normalization_constants(&spec)?;
    println!("env: {env}");
    println!("agents: {}", spec.num_agents);
    println!("normalization: min {:.3} max {:.3}", norm.min, norm.max);
    if env == EnvId::Pgg {
        let q = optimal_constrained_mediator_pgg(spec.num_agents, spec.multiplier)?;
        println!("optimal constrained mediator:");
        for (m, x) in q.iter().enumerate().skip(1) {
            println!("  pi_M(cooperate | |C|={m}) = {x:.4}");
        }
    }
    if let Some(path) = profile {
        let profile: MixedProfile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let payoffs = expected_payoffs(&spec, &profile)?;
        println!("expected payoffs: {}", fmt_vec(&payoffs));
        let mean = payoffs.iter().sum::<f64>() / payoffs.len() as f64;
        println!("normalized reward: {:.3}", norm.normalize(mean));
        let gaps = (0..spec.num_agents)
            .map(|i| best_response_gap(&spec, &profile, i))
            .collect::<Result<Vec<_>>>()?;
        println!("best-response gaps: {}", fmt_vec(&gaps));
        let equilibrium = gaps.iter().all(|&g| g <= 1e-9);
        println!("equilibrium: {}", if equilibrium { "yes" } else { "no" });
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run_config(args).and_then(|cfg| {
            let report = sweep(&cfg)?;
            match &cfg.harness.out {
                Some(path) => emit(&report, cfg.harness.format, path)?,
                None => print!("{}", render(&report, cfg.harness.format)?),
            }
            Ok(report.failed.is_empty())
        }),
        Command::Oracle {
            env,
            profile,
            num_agents,
            multiplier,
        } => oracle(env, profile, num_agents, multiplier).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
