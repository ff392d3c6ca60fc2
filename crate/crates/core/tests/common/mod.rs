//! Seeded checks shared by the property, oracle and acceptance suites. Each
//! returns a description of the first violation it finds.
#![allow(dead_code)]

use mediated_marl::agents::LearnerConfig;
use mediated_marl::approx::{masked_policy, policy_loss_grad, EntropySchedule, MlpParams};
use mediated_marl::game::PayoffSpec;
use mediated_marl::mediation::{CoalitionEncoding, Status};
use mediated_marl::mediator::{
    lambda_update, mediator_actor_loss, DualSamples, LagrangeState, MediatorActor, MediatorConfig, MediatorCritic,
    MediatorLearner, ObjectiveMode,
};
use mediated_marl::oracle::{
    best_response_gap, expected_payoffs, optimal_constrained_mediator_pgg, pgg_full_commit_profile, MediatorPolicy,
    MixedProfile, ProfilePolicy,
};
use mediated_marl::rollout::{sample_episode, Episode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

pub fn random_distribution(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// A different random mediator rule for every turn and coalition.
pub fn coalition_rules(spec: &PayoffSpec, rng: &mut ChaCha8Rng) -> MediatorPolicy {
    let n = spec.num_agents;
    let rules = (0..spec.horizon)
        .map(|_| {
            (0..1usize << n)
                .map(|bits| {
                    (0..n)
                        .map(|i| {
                            if bits >> i & 1 == 1 {
                                random_distribution(rng, spec.num_actions(i))
                            } else {
                                Vec::new()
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    MediatorPolicy::ByCoalition { rules }
}

pub fn random_profile(spec: &PayoffSpec, window: usize, seed: u64) -> MixedProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents = (0..spec.horizon)
        .map(|_| {
            (0..spec.num_agents)
                .map(|i| random_distribution(&mut rng, spec.num_actions(i) + 1))
                .collect()
        })
        .collect();
    MixedProfile {
        window,
        agents,
        mediator: Some(coalition_rules(spec, &mut rng)),
    }
}

pub fn games() -> Vec<PayoffSpec> {
    vec![
        PayoffSpec::prisoners_dilemma(),
        PayoffSpec::pd_with_sacrifice(),
        PayoffSpec::two_step_pd(),
        PayoffSpec::public_goods(3, 2.0),
        PayoffSpec::iterative_public_goods(3, 2.0),
    ]
}

/// A game and a window length picked by `seed`.
fn pick_game(seed: u64) -> (usize, PayoffSpec, usize) {
    let index = (seed % 5) as usize;
    let spec = games().swap_remove(index);
    let window = 1 + (seed / 5) as usize % spec.horizon;
    (index, spec, window)
}

pub fn sample_episodes(spec: &PayoffSpec, window: usize, count: usize, seed: u64) -> Vec<Episode> {
    let profile = random_profile(spec, window, seed);
    let protocol = profile.protocol(spec).unwrap();
    let policy = ProfilePolicy {
        spec,
        profile: &profile,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..count)
        .map(|_| sample_episode(&protocol, &policy, &mut rng).unwrap())
        .collect()
}

pub fn mediator_config(mode: ObjectiveMode) -> MediatorConfig {
    MediatorConfig {
        learner: LearnerConfig {
            lr_actor: 1e-2,
            lr_critic: 1e-2,
            hidden: 8,
            entropy: EntropySchedule::linear(0.1, 0.0, 0.1),
        },
        mode,
        symmetric: false,
        lambda_lr: 1e-2,
        log_lambda_bounds: [-4.0, 4.0],
    }
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn finite_difference(params: &MlpParams, f: impl Fn(&MlpParams) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut work = params.clone();
    (0..params.len())
        .map(|k| {
            let orig = work.as_slice()[k];
            work.as_mut_slice()[k] = orig + h;
            let up = f(&work);
            work.as_mut_slice()[k] = orig - h;
            let down = f(&work);
            work.as_mut_slice()[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn backprop_gradient(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (input, hidden, output) = (rng.gen_range(1..6), rng.gen_range(1..10), rng.gen_range(1..5));
    let net = MlpParams::new(input, hidden, output, &mut rng);
    let x: Vec<f64> = (0..input).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let up: Vec<f64> = (0..output).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let analytic = net.backward(&x, &up).unwrap();
    let numeric = finite_difference(&net, |p| {
        p.forward(&x).unwrap().iter().zip(&up).map(|(y, u)| y * u).sum()
    });
    let err = relative_error(&analytic, &numeric);
    ensure!(err < 1e-4, "seed {seed}: relative error {err}");
    Ok(())
}

pub fn policy_loss_gradient(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions = rng.gen_range(2..6);
    let advantage = rng.gen_range(-5.0..5.0);
    let beta = rng.gen_range(0.0..1.0);
    let net = MlpParams::new(3, 8, actions, &mut rng);
    let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut mask: Vec<bool> = (0..actions).map(|_| rng.gen_bool(0.7)).collect();
    let action = rng.gen_range(0..actions);
    mask[action] = true;
    let loss = |p: &MlpParams| {
        let logits = p.forward(&x).unwrap();
        policy_loss_grad(&logits, &mask, action, advantage, beta).unwrap().0
    };
    let logits = net.forward(&x).unwrap();
    let (_, dlogits) = policy_loss_grad(&logits, &mask, action, advantage, beta).unwrap();
    let analytic = net.backward(&x, &dlogits).unwrap();
    let err = relative_error(&analytic, &finite_difference(&net, loss));
    ensure!(err < 1e-4, "seed {seed}: relative error {err}");
    Ok(())
}

pub fn masked_softmax(logits: &[f64], mask: &[bool], shift: f64) -> Check {
    let p = masked_policy(logits, mask).map_err(|e| e.to_string())?;
    for (pi, m) in p.iter().zip(mask) {
        ensure!(if *m { *pi >= 0.0 } else { *pi == 0.0 }, "mass {pi} on mask {m}");
    }
    let total: f64 = p.iter().sum();
    ensure!((total - 1.0).abs() < 1e-12, "total mass {total}");
    let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
    let q = masked_policy(&shifted, mask).map_err(|e| e.to_string())?;
    for (a, b) in p.iter().zip(&q) {
        ensure!((a - b).abs() < 1e-8, "shift by {shift} moved {a} to {b}");
    }
    ensure!(
        masked_policy(logits, &vec![false; logits.len()]).is_err(),
        "empty mask accepted"
    );
    Ok(())
}

pub fn masked_softmax_seeded(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..7);
    let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
    let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
    mask[rng.gen_range(0..n)] = true;
    masked_softmax(&logits, &mask, rng.gen_range(-50.0..50.0))
}

fn bits(p: &MlpParams) -> Vec<u64> {
    p.as_slice().iter().map(|x| x.to_bits()).collect()
}

/// Losses, gradients and three full updates agree bit for bit.
pub fn constrained_matches_naive_at_zero(seed: u64) -> Check {
    let (_, spec, window) = pick_game(seed);
    let episodes = sample_episodes(&spec, window, 8, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actor = MediatorActor::new(&spec, CoalitionEncoding::OneHot, 8, &mut rng);
    let critic = MediatorCritic::new(&spec, CoalitionEncoding::OneHot, 8, &mut rng);
    let zero = LagrangeState::zero(spec.num_agents);
    for ep in &episodes {
        for (t, step) in ep.steps.iter().enumerate() {
            let next = ep.steps.get(t + 1);
            for i in step.coalition.members() {
                let loss = |mode| mediator_actor_loss(&actor, &critic, step, next, i, &zero, mode, 0.99, 0.3).unwrap();
                let (naive, cons) = (loss(ObjectiveMode::Naive), loss(ObjectiveMode::Constrained));
                ensure!(
                    naive.0.to_bits() == cons.0.to_bits(),
                    "seed {seed}: loss {} vs {}",
                    naive.0,
                    cons.0
                );
                let same = naive.1.iter().zip(&cons.1).all(|(a, b)| a.to_bits() == b.to_bits());
                ensure!(same && naive.1.len() == cons.1.len(), "seed {seed}: gradients differ");
            }
        }
    }
    let build = |mode| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let mut m = MediatorLearner::new(&spec, mediator_config(mode), 0.99, &mut rng).unwrap();
        m.lagrange = LagrangeState::zero(spec.num_agents);
        m
    };
    let mut naive = build(ObjectiveMode::Naive);
    let mut cons = build(ObjectiveMode::Constrained);
    for _ in 0..3 {
        naive.update(&episodes, 0.1).unwrap();
        cons.update(&episodes, 0.1).unwrap();
    }
    ensure!(
        bits(&naive.actor.net) == bits(&cons.actor.net),
        "seed {seed}: actor parameters differ"
    );
    ensure!(
        bits(&naive.critic.net) == bits(&cons.critic.net),
        "seed {seed}: critic parameters differ"
    );
    Ok(())
}

pub fn multipliers_bounded(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 3;
    let mut state = LagrangeState::new(n, rng.gen_range(0.0..2.0), [-4.0, 4.0]).unwrap();
    for _ in 0..rng.gen_range(1..40) {
        let mut samples = DualSamples::new(n);
        for i in 0..n {
            for _ in 0..rng.gen_range(0..4) {
                samples.ic[i].push(rng.gen_range(-100.0..100.0));
            }
            for _ in 0..rng.gen_range(0..4) {
                samples.e[i].push(rng.gen_range(-100.0..100.0));
            }
        }
        lambda_update(&mut state, &samples);
        for i in 0..n {
            for log in [state.log_ic[i], state.log_e[i]] {
                ensure!((-4.0..=4.0).contains(&log), "seed {seed}: log multiplier {log}");
            }
            ensure!(
                state.ic(i) > 0.0 && state.e(i) > 0.0,
                "seed {seed}: non-positive multiplier"
            );
        }
    }
    Ok(())
}

/// Violated constraints raise every multiplier below the ceiling; satisfied
/// ones lower every multiplier above the floor.
pub fn dual_descent_direction(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 3;
    let mut state = LagrangeState::new(n, rng.gen_range(1e-3..1.0), [-4.0, 4.0]).unwrap();
    for i in 0..n {
        state.log_ic[i] = rng.gen_range(-4.0..=4.0);
        state.log_e[i] = rng.gen_range(-4.0..=4.0);
    }
    let slack: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(0.01..10.0)).collect();
    let samples = |sign: f64| {
        let mut s = DualSamples::new(n);
        for i in 0..n {
            s.ic[i].push(sign * slack[i]);
            s.e[i].push(sign * slack[n + i]);
        }
        s
    };
    let before = state.clone();
    lambda_update(&mut state, &samples(-1.0));
    for i in 0..n {
        for (after, prev) in [(state.log_ic[i], before.log_ic[i]), (state.log_e[i], before.log_e[i])] {
            ensure!(
                after > prev || (prev == 4.0 && after == 4.0),
                "seed {seed}: {prev} -> {after} on violation"
            );
        }
    }
    let raised = state.clone();
    lambda_update(&mut state, &samples(1.0));
    for i in 0..n {
        for (after, prev) in [(state.log_ic[i], raised.log_ic[i]), (state.log_e[i], raised.log_e[i])] {
            ensure!(after < prev || after == -4.0, "seed {seed}: {prev} -> {after} on slack");
        }
    }
    Ok(())
}

pub fn coalition_windows(seed: u64) -> Check {
    let (_, spec, window) = pick_game(seed);
    for ep in sample_episodes(&spec, window, 20, seed) {
        ensure!(
            ep.steps.len() == spec.horizon,
            "seed {seed}: episode of {} steps",
            ep.steps.len()
        );
        for start in ep.window_starts() {
            let coalition = &ep.steps[start].coalition;
            ensure!(
                ep.steps[start].status.iter().all(|&s| s == Status::Free),
                "seed {seed}: not free at {start}"
            );
            for step in &ep.steps[start..ep.window_end(start)] {
                ensure!(
                    &step.coalition == coalition,
                    "seed {seed}: coalition changed at turn {}",
                    step.turn
                );
                for i in 0..spec.num_agents {
                    let member = coalition.contains(i);
                    ensure!(
                        step.mediator_actions[i].is_some() == member,
                        "seed {seed}: mediator action of {i}"
                    );
                    if step.turn != start {
                        let want = if member { Status::Committed } else { Status::Locked };
                        ensure!(
                            step.status[i] == want,
                            "seed {seed}: status of {i} at turn {}",
                            step.turn
                        );
                    }
                    let consistent = if member {
                        step.choices[i] == spec.num_actions(i) && Some(step.joint_action[i]) == step.mediator_actions[i]
                    } else {
                        step.choices[i] < spec.num_actions(i) && step.joint_action[i] == step.choices[i]
                    };
                    ensure!(consistent, "seed {seed}: action of {i} at turn {}", step.turn);
                }
            }
        }
    }
    Ok(())
}

/// The mediator's return equals the members' summed returns, window by
/// window. Exact for matrix games; public goods rewards are only summed in a
/// different order.
pub fn return_decomposition(seed: u64) -> Check {
    let (index, spec, window) = pick_game(seed);
    let tol = if index < 3 { 0.0 } else { 1e-9 };
    for ep in sample_episodes(&spec, window, 20, seed) {
        let mut total = 0.0;
        for start in ep.window_starts() {
            let coalition = &ep.steps[start].coalition;
            let steps = &ep.steps[start..ep.window_end(start)];
            let by_step: f64 = steps
                .iter()
                .map(|s| s.coalition.members().map(|i| s.rewards[i]).sum::<f64>())
                .sum();
            let by_member: f64 = coalition
                .members()
                .map(|i| steps.iter().map(|s| s.rewards[i]).sum::<f64>())
                .sum();
            ensure!(
                (by_step - by_member).abs() <= tol,
                "seed {seed}: {by_step} vs {by_member}"
            );
            total += by_step;
        }
        ensure!(
            (ep.mediator_return() - total).abs() < 1e-9,
            "seed {seed}: mediator return"
        );
        if window == spec.horizon {
            let members: f64 = ep.steps[0].coalition.members().map(|i| ep.returns()[i]).sum();
            ensure!(
                (ep.mediator_return() - members).abs() < 1e-9,
                "seed {seed}: ex-ante return"
            );
        }
    }
    Ok(())
}

/// Sampled mean returns lie within three standard errors of the exact ones.
pub fn monte_carlo_agrees(spec: &PayoffSpec, profile: &MixedProfile, episodes: usize, seed: u64) -> Check {
    let exact = expected_payoffs(spec, profile).map_err(|e| e.to_string())?;
    let protocol = profile.protocol(spec).map_err(|e| e.to_string())?;
    let policy = ProfilePolicy { spec, profile };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.num_agents;
    let mut sum = vec![0.0; n];
    let mut sq = vec![0.0; n];
    for _ in 0..episodes {
        let ret = sample_episode(&protocol, &policy, &mut rng).unwrap().returns();
        for i in 0..n {
            sum[i] += ret[i];
            sq[i] += ret[i] * ret[i];
        }
    }
    let m = episodes as f64;
    for i in 0..n {
        let mean = sum[i] / m;
        let se = ((sq[i] / m - mean * mean) / (m - 1.0)).sqrt();
        ensure!(
            (mean - exact[i]).abs() <= 3.0 * se,
            "agent {i} sampled {mean} vs exact {} (se {se})",
            exact[i]
        );
    }
    Ok(())
}

/// Monte-Carlo agreement on every matrix game and two public goods games.
pub fn monte_carlo_suite(episodes: usize) -> Check {
    let cases = [
        (PayoffSpec::prisoners_dilemma(), 1),
        (PayoffSpec::pd_with_sacrifice(), 1),
        (PayoffSpec::two_step_pd(), 1),
        (PayoffSpec::two_step_pd(), 2),
        (PayoffSpec::public_goods(3, 2.0), 1),
    ];
    for (k, (spec, window)) in cases.into_iter().enumerate() {
        monte_carlo_agrees(
            &spec,
            &random_profile(&spec, window, 100 + k as u64),
            episodes,
            k as u64,
        )?;
    }
    let plain = MixedProfile::stationary(vec![vec![0.3, 0.7], vec![0.6, 0.4]]);
    monte_carlo_agrees(&PayoffSpec::prisoners_dilemma(), &plain, episodes, 9)?;
    let q = optimal_constrained_mediator_pgg(5, 2.0).map_err(|e| e.to_string())?;
    let mut profile = pgg_full_commit_profile(5, &q);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    profile.agents = vec![(0..5).map(|_| random_distribution(&mut rng, 3)).collect()];
    monte_carlo_agrees(&PayoffSpec::public_goods(5, 2.0), &profile, episodes, 12)
}

/// Cooperates for the full coalition, defects for a lone member.
pub fn pd_mediator() -> MediatorPolicy {
    let d = vec![1.0, 0.0];
    let c = vec![0.0, 1.0];
    MediatorPolicy::ByCoalition {
        rules: vec![vec![
            vec![vec![], vec![]],
            vec![d.clone(), vec![]],
            vec![vec![], d],
            vec![c.clone(), c],
        ]],
    }
}

pub fn pd_all_commit() -> MixedProfile {
    MixedProfile {
        window: 1,
        agents: vec![vec![vec![0.0, 0.0, 1.0]; 2]],
        mediator: Some(pd_mediator()),
    }
}

pub fn pd_commitment_equilibrium() -> Check {
    let pd = PayoffSpec::prisoners_dilemma();
    let profile = pd_all_commit();
    for i in 0..2 {
        let gap = best_response_gap(&pd, &profile, i).map_err(|e| e.to_string())?;
        ensure!(gap.abs() < 1e-12, "agent {i} gains {gap} by deviating");
    }
    Ok(())
}

pub fn pgg_three_agent_target() -> Check {
    let q = optimal_constrained_mediator_pgg(3, 2.0).map_err(|e| e.to_string())?;
    ensure!(q.len() == 4, "{q:?}");
    ensure!((q[2] - 0.75).abs() <= 1e-3, "pi_M(c | |C|=2) = {}", q[2]);
    Ok(())
}
