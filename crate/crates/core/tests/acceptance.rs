//! End-to-end acceptance run: trains every configuration the criteria cover
//! and prints one `[PASS]` or `[FAIL]` line per criterion.
//!
//! Learning outcomes are reported, not asserted, because several of them
//! depend on seed luck; the process fails only when the deterministic
//! property checks (criterion 8) fail, or on any failure when
//! `ACCEPTANCE_STRICT=1`.
//!
//! Environment:
//! - `ACCEPTANCE_SEEDS`: seeds per configuration, replacing the defaults.
//! - `ACCEPTANCE_CRITERIA`: comma-separated subset to run, e.g. `1,2,8`.
//! - `ACCEPTANCE_STRICT`: exit nonzero when any criterion fails.

mod common;

use std::time::Instant;

use mediated_marl::harness::{sweep, EnvId, MediatorSetting, RunConfig, SweepReport};

type Criterion = (usize, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(checks: &[(bool, String)]) -> Self {
        Verdict {
            pass: checks.iter().all(|(ok, _)| *ok),
            detail: checks.iter().map(|(_, d)| d.as_str()).collect::<Vec<_>>().join("; "),
        }
    }
}

fn seeds(default: usize) -> usize {
    std::env::var("ACCEPTANCE_SEEDS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or(default)
}

fn train(
    env: EnvId,
    mediator: MediatorSetting,
    k: usize,
    seed_count: usize,
    game: Option<(usize, f64)>,
) -> SweepReport {
    let mut config = RunConfig::preset(env);
    config.mediator.mode = mediator;
    config.mediation.k = k;
    config.harness.seeds = (0..seeds(seed_count) as u64).collect();
    if let Some((n, mult)) = game {
        config.game.num_agents = n;
        config.game.multiplier = mult;
    }
    let started = Instant::now();
    let report = sweep(&config).expect("valid configuration");
    eprintln!(
        "  trained {env} {mediator} k={k} N={} over {} seeds in {:.0}s",
        config.game.num_agents,
        config.harness.seeds.len(),
        started.elapsed().as_secs_f64()
    );
    report
}

fn mean(report: &SweepReport, metric: &str, agent: Option<usize>) -> f64 {
    report.mean(metric, agent).unwrap_or(f64::NAN)
}

/// Mean over agents of the empirical commitment rate.
fn commit_rate(report: &SweepReport) -> f64 {
    (0..report.num_agents)
        .map(|i| mean(report, "emp(commit)", Some(i)))
        .sum::<f64>()
        / report.num_agents as f64
}

fn below(name: &str, value: f64, bound: f64) -> (bool, String) {
    (value < bound, format!("{name} = {value:.3} (< {bound})"))
}

fn above(name: &str, value: f64, bound: f64) -> (bool, String) {
    (value > bound, format!("{name} = {value:.3} (> {bound})"))
}

fn at_least(name: &str, value: f64, bound: f64) -> (bool, String) {
    (value >= bound, format!("{name} = {value:.3} (>= {bound})"))
}

fn within(name: &str, value: f64, lo: f64, hi: f64) -> (bool, String) {
    (
        (lo..=hi).contains(&value),
        format!("{name} = {value:.3} (in [{lo}, {hi}])"),
    )
}

fn aborted(report: &SweepReport) -> (bool, String) {
    (report.failed.is_empty(), format!("aborted seeds {:?}", report.failed))
}

fn pd_baseline() -> Verdict {
    let r = train(EnvId::Pd, MediatorSetting::None, 1, 10, None);
    Verdict::new(&[
        below("pi_0(c)", mean(&r, "pi(cooperate)", Some(0)), 0.05),
        below("pi_1(c)", mean(&r, "pi(cooperate)", Some(1)), 0.05),
        aborted(&r),
    ])
}

fn pd_naive() -> Verdict {
    let r = train(EnvId::Pd, MediatorSetting::Naive, 1, 50, None);
    let full = |i| mean(&r, "pi_M(cooperate|[1,1])", Some(i));
    Verdict::new(&[
        above("pi_0(m)", mean(&r, "pi(commit)", Some(0)), 0.90),
        above("pi_1(m)", mean(&r, "pi(commit)", Some(1)), 0.90),
        above("pi_M(c|[1,1]) min head", full(0).min(full(1)), 0.90),
        below("pi_M(c|[1,0])", mean(&r, "pi_M(cooperate|[1,0])", Some(0)), 0.10),
        below("pi_M(c|[0,1])", mean(&r, "pi_M(cooperate|[0,1])", Some(1)), 0.10),
        aborted(&r),
    ])
}

fn pgg_three() -> Verdict {
    let naive = train(EnvId::Pgg, MediatorSetting::Naive, 1, 10, None);
    let cons = train(EnvId::Pgg, MediatorSetting::Constrained, 1, 10, None);
    Verdict::new(&[
        within("naive commit", commit_rate(&naive), 0.50, 0.80),
        within("naive reward", mean(&naive, "normalized_reward", None), 0.55, 0.75),
        above("constrained commit", commit_rate(&cons), 0.85),
        above("constrained reward", mean(&cons, "normalized_reward", None), 0.80),
        within("pi_M(c||C|=2)", mean(&cons, "pi_M(cooperate||C|=2)", None), 0.60, 0.90),
        aborted(&naive),
        aborted(&cons),
    ])
}

fn pgg_large() -> Verdict {
    let mut checks = Vec::new();
    for (n, mult) in [(10, 2.0), (25, 5.0)] {
        let naive = train(EnvId::Pgg, MediatorSetting::Naive, 1, 2, Some((n, mult)));
        let cons = train(EnvId::Pgg, MediatorSetting::Constrained, 1, 2, Some((n, mult)));
        checks.push(below(
            &format!("N={n} naive reward"),
            mean(&naive, "normalized_reward", None),
            0.20,
        ));
        checks.push(above(
            &format!("N={n} constrained reward"),
            mean(&cons, "normalized_reward", None),
            0.70,
        ));
        checks.push(aborted(&naive));
        checks.push(aborted(&cons));
    }
    Verdict::new(&checks)
}

fn pgg_iterative() -> Verdict {
    let naive = train(EnvId::PggIter, MediatorSetting::Naive, 10, 2, None);
    let cons = train(EnvId::PggIter, MediatorSetting::Constrained, 10, 2, None);
    let ex_post = train(EnvId::PggIter, MediatorSetting::Naive, 1, 2, None);
    Verdict::new(&[
        above("k=10 naive reward", mean(&naive, "normalized_reward", None), 0.85),
        above("k=10 constrained reward", mean(&cons, "normalized_reward", None), 0.85),
        below("k=1 naive reward", mean(&ex_post, "normalized_reward", None), 0.40),
        aborted(&naive),
        aborted(&cons),
        aborted(&ex_post),
    ])
}

fn pd_sacrifice() -> Verdict {
    let naive = train(EnvId::Pds, MediatorSetting::Naive, 1, 4, None);
    let cons = train(EnvId::Pds, MediatorSetting::Constrained, 1, 4, None);
    Verdict::new(&[
        below("naive pi_1(m)", mean(&naive, "pi(commit)", Some(1)), 0.10),
        above("constrained pi_0(m)", mean(&cons, "pi(commit)", Some(0)), 0.90),
        above("constrained pi_1(m)", mean(&cons, "pi(commit)", Some(1)), 0.90),
        within("P_full(c,c)", mean(&cons, "P_full(c,c)", None), 0.45, 0.75),
        at_least("welfare", mean(&cons, "social_welfare", None), 4.1),
        aborted(&naive),
        aborted(&cons),
    ])
}

fn two_step_pd() -> Verdict {
    let ex_post = train(EnvId::Pd2, MediatorSetting::Naive, 1, 10, None);
    let ex_ante = train(EnvId::Pd2, MediatorSetting::Naive, 2, 10, None);
    Verdict::new(&[
        below("k=1 pi_0(m|t=0)", mean(&ex_post, "pi(commit|t=0)", Some(0)), 0.10),
        above("k=1 pi_0(m|t=1)", mean(&ex_post, "pi(commit|t=1)", Some(0)), 0.90),
        above("k=2 pi_0(m|t=0)", mean(&ex_ante, "pi(commit|t=0)", Some(0)), 0.90),
        aborted(&ex_post),
        aborted(&ex_ante),
    ])
}

fn repeated(name: &str, cases: u64, check: fn(u64) -> common::Check) -> (bool, String) {
    match (0..cases).map(|seed| check(0xacce97 + seed)).find(Result::is_err) {
        Some(Err(e)) => (false, format!("{name}: {e}")),
        _ => (true, format!("{name} x{cases}")),
    }
}

fn single(name: &str, check: common::Check) -> (bool, String) {
    match check {
        Ok(()) => (true, name.to_string()),
        Err(e) => (false, format!("{name}: {e}")),
    }
}

fn properties() -> Verdict {
    Verdict::new(&[
        repeated("backprop gradient", 100, common::backprop_gradient),
        repeated("policy loss gradient", 100, common::policy_loss_gradient),
        repeated("masked softmax", 100, common::masked_softmax_seeded),
        repeated(
            "constrained = naive at zero multipliers",
            25,
            common::constrained_matches_naive_at_zero,
        ),
        repeated("multiplier bounds", 100, common::multipliers_bounded),
        repeated("dual descent direction", 100, common::dual_descent_direction),
        repeated("coalition windows", 25, common::coalition_windows),
        repeated("return decomposition", 25, common::return_decomposition),
        single("Monte-Carlo consistency", common::monte_carlo_suite(100_000)),
        single("pgg N=3 target 0.75", common::pgg_three_agent_target()),
        single("mediated PD equilibrium", common::pd_commitment_equilibrium()),
    ])
}

/// Honours the libtest `--skip NAME` and name-filter arguments that
/// `cargo test` forwards, so the run can be excluded like any other test.
fn deselected() -> bool {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut filters = Vec::new();
    let mut i = 0;
    while i < args.len() {
        match args[i].as_str() {
            "--skip" => {
                if args.get(i + 1).is_some_and(|s| "acceptance".contains(s.as_str())) {
                    return true;
                }
                i += 1;
            }
            a if !a.starts_with('-') => filters.push(a),
            _ => {}
        }
        i += 1;
    }
    !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f))
}

fn main() {
    if deselected() {
        return;
    }
    let selected: Option<Vec<usize>> = std::env::var("ACCEPTANCE_CRITERIA")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let criteria: [Criterion; 8] = [
        (1, "PD without mediator defects", pd_baseline),
        (2, "PD naive mediator", pd_naive),
        (3, "public goods N=3", pgg_three),
        (4, "public goods N=10 and N=25", pgg_large),
        (5, "iterative public goods", pgg_iterative),
        (6, "PD with sacrifice", pd_sacrifice),
        (7, "two-step PD", two_step_pd),
        (8, "property suites", properties),
    ];
    let mut failed = Vec::new();
    for (id, title, run) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            println!("[SKIP] {id}. {title}");
            continue;
        }
        let verdict = run();
        let tag = if verdict.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id}. {title}: {}", verdict.detail);
        if !verdict.pass {
            failed.push(id);
        }
    }
    if failed.contains(&8) || (strict && !failed.is_empty()) {
        std::process::exit(1);
    }
}
