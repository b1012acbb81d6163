//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each, and exits nonzero if any failed.
//!
//! Filter with `cargo test --test acceptance -- 4 7` (criterion numbers).

use std::time::{Duration, Instant};

use lql_core::agents::*;
use lql_core::losses::*;
use lql_core::mdp::*;
use lql_core::oracle::{nstep_fixed_point, value_iteration};
use lql_core::qfunc::*;
use lql_core::replay::{ReplayBuffer, Segment, TrajectoryBatch};
use lql_core::theory::*;
use lql_core::{Mdp, Transition};
use lql_harness::aggregate::{bootstrap_ci, BOOTSTRAP_ITERS, CI_LEVEL};
use lql_harness::config::TheoryConfig;
use lql_harness::verify::verify_theory;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Outcome of one criterion: pass flag plus a one-line detail.
type Outcome = (bool, String);

struct Criterion {
    id: usize,
    title: &'static str,
    budget: Duration,
    run: fn(&mut Shared) -> Outcome,
}

/// Runs shared between criteria 8 and 9.
#[derive(Default)]
struct Shared {
    chain: Option<ChainRuns>,
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let criteria = [
        Criterion { id: 1, title: "fixed-point preservation", budget: secs(10), run: fixed_point },
        Criterion { id: 2, title: "convergence agreement", budget: secs(60), run: convergence },
        Criterion { id: 3, title: "n-step bias reproduction", budget: secs(60), run: nstep_bias },
        Criterion { id: 4, title: "compute parity", budget: secs(120), run: compute_parity },
        Criterion { id: 5, title: "false-penalty bounds", budget: secs(300), run: theory_bounds },
        Criterion { id: 6, title: "telescoping identity", budget: secs(30), run: telescoping },
        Criterion { id: 7, title: "Q stability under aliasing", budget: secs(300), run: q_stability },
        Criterion { id: 8, title: "trajectory-length scaling", budget: secs(900), run: length_scaling },
        Criterion { id: 9, title: "zero-weight ablation", budget: secs(900), run: ablation },
        Criterion { id: 10, title: "gradient integrity", budget: secs(60), run: gradients },
    ];
    let mut shared = Shared::default();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let t = Instant::now();
        let (ok, detail) = (c.run)(&mut shared);
        let elapsed = t.elapsed();
        let in_time = elapsed <= c.budget;
        let pass = ok && in_time;
        failed += usize::from(!pass);
        let timing = if in_time { String::new() } else { format!(" over budget {:?},", c.budget) };
        println!(
            "{} criterion {}: {} ({};{timing} {:.1}s)",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.title,
            detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

// ---------------------------------------------------------------- helpers

fn random_deterministic<R: Rng>(ns: usize, na: usize, gamma: f64, rng: &mut R) -> Mdp {
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    let mut terminal = vec![false; ns];
    terminal[ns - 1] = true;
    for s in 0..ns {
        for a in 0..na {
            let sn = if terminal[s] { s } else { rng.gen_range(0..ns) };
            transition[(s * na + a) * ns + sn] = 1.0;
            if !terminal[s] {
                reward[s * na + a] = rng.gen_range(-1.0..=1.0);
            }
        }
    }
    FiniteMdp::new(ns, na, transition, reward, terminal, gamma, 1.0, 0).unwrap()
}

fn random_stochastic<R: Rng>(ns: usize, na: usize, gamma: f64, rng: &mut R) -> Mdp {
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    let mut terminal = vec![false; ns];
    terminal[ns - 1] = true;
    for s in 0..ns {
        for a in 0..na {
            let row = &mut transition[(s * na + a) * ns..][..ns];
            if terminal[s] {
                row[s] = 1.0;
                continue;
            }
            let w: Vec<f64> = (0..ns).map(|_| rng.gen::<f64>() + 0.05).collect();
            let z: f64 = w.iter().sum();
            row.iter_mut().zip(&w).for_each(|(p, x)| *p = x / z);
            reward[s * na + a] = rng.gen_range(-1.0..=1.0);
        }
    }
    FiniteMdp::new(ns, na, transition, reward, terminal, gamma, 1.0, 0).unwrap()
}

/// Every action sequence of up to `len` steps from every non-terminal
/// state; segments stop early at terminals.
fn enumerate_segments(mdp: &Mdp, len: usize) -> Vec<Segment<f64>> {
    let mut out = Vec::new();
    for s0 in (0..mdp.num_states()).filter(|&s| !mdp.is_terminal(s)) {
        let mut stack = vec![(vec![s0], Vec::new(), Vec::new())];
        while let Some((states, actions, rewards)) = stack.pop() {
            let s = *states.last().unwrap();
            if actions.len() == len || (!actions.is_empty() && mdp.is_terminal(s)) {
                out.push(Segment { states, actions, rewards, terminal_end: mdp.is_terminal(s), episode_id: 0 });
                continue;
            }
            for a in 0..mdp.num_actions() {
                let (mut st, mut ac, mut rw): (Vec<usize>, Vec<usize>, Vec<f64>) = (states.clone(), actions.clone(), rewards.clone());
                st.push(mdp.successors(s, a)[0].0);
                ac.push(a);
                rw.push(mdp.reward(s, a));
                stack.push((st, ac, rw));
            }
        }
    }
    out
}

fn forward_policy(ns: usize, p: f64) -> BehaviorPolicy<f64> {
    let mut row = [1.0 - p; 2];
    row[CHAIN_FORWARD] = p;
    BehaviorPolicy::table(row.repeat(ns), 2).unwrap()
}

fn non_terminal(mdp: &Mdp) -> Vec<usize> {
    (0..mdp.num_states()).filter(|&s| !mdp.is_terminal(s)).collect()
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Tabular SGD settings shared by the convergence criteria.
fn tabular_cfg(method: Method, gamma: f64) -> TrainConfig {
    TrainConfig {
        method,
        gamma,
        traj_len: 8,
        trajs_per_batch: 16,
        protocol: Protocol::OfflineOnly,
        offline_steps: 20_000,
        eval_every: 20_000,
        eval_episodes: 1,
        eval_max_len: 50,
        repr: ReprConfig::Tabular,
        optimizer: OptimizerConfig::Sgd,
        lr: 0.5,
        tau: 0.05,
        ..TrainConfig::desk()
    }
}

fn uniform_data(mdp: &Mdp, n: usize, max_len: usize, seed: u64) -> Vec<Transition> {
    let pol = BehaviorPolicy::uniform(mdp.num_actions());
    generate_dataset_from(mdp, &pol, n, max_len, &non_terminal(mdp), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

// ------------------------------------------------------------- criteria

fn fixed_point(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut rows = 0usize;
    for _ in 0..6 {
        let ns = rng.gen_range(3..=6);
        let na = rng.gen_range(2..=3);
        let gamma = rng.gen_range(0.5..0.99);
        let m = random_deterministic(ns, na, gamma, &mut rng);
        let qs = value_iteration(&m, 1e-13).unwrap();
        let q = QFunction::tabular_from(ns, na, &qs.q).unwrap();
        for l in [2, 8] {
            let segs = enumerate_segments(&m, l);
            let batch = TrajectoryBatch::from_segments(gamma, l, &segs).unwrap();
            for row in 0..batch.batch_size() {
                let c = EvalCache::build(&batch, row, &q, &q).unwrap();
                let v = batch.valid_len(row);
                for k in 0..v {
                    worst = worst.max(td_loss(&batch, row, &c, k).unwrap().value);
                    for j in future_index_set(k, v) {
                        worst = worst.max(lb_penalty(&batch, row, &c, k, j).unwrap().value);
                    }
                    for i in past_index_set(k) {
                        worst = worst.max(ub_penalty(&batch, row, &c, i, k).unwrap().value);
                    }
                }
            }
            rows += batch.batch_size();
        }
    }
    (worst <= 1e-9, format!("6 MDPs, {rows} enumerated segments, largest term {worst:.1e}"))
}

fn convergence(_: &mut Shared) -> Outcome {
    let chain = build_chain::<f64>(2, RewardMode::GoalPlusOne, 0.5).unwrap();
    let grid = build_gridmaze::<f64>(&GridLayout::open(3, 3), RewardMode::GoalPlusOne, 0.9).unwrap().mdp;
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, mdp) in [("chain", &chain), ("grid", &grid)] {
        let qs = value_iteration(mdp, 1e-13).unwrap();
        let data = uniform_data(mdp, 2000, 50, 1);
        for method in [Method::Td, Method::Lql] {
            let run = train(mdp, &data, &tabular_cfg(method, mdp.gamma())).unwrap();
            let d = sup_dist(&run.pair.online.table(), &qs.q);
            ok &= d <= 1e-3;
            parts.push(format!("{name}/{method} {d:.1e}"));
        }
    }
    (ok, format!("sup-norm errors: {}", parts.join(", ")))
}

fn nstep_bias(_: &mut Shared) -> Outcome {
    let m = build_bad_tail::<f64>(0.9).unwrap();
    let qs = value_iteration(&m, 1e-13).unwrap();
    let bad = BehaviorPolicy::table(vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5], 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut data = generate_dataset_from(&m, &bad, 1000, 10, &[0], &mut rng).unwrap();
    // Uniform coverage of the tail state, so 1-step information exists.
    let mut probe = generate_dataset_from(&m, &BehaviorPolicy::uniform(2), 1000, 10, &[1], &mut rng).unwrap();
    offset_episode_ids(&mut probe, 1_000_000);
    data.extend(probe);
    let fp = nstep_fixed_point(&m, &bad, 2, 1e-13).unwrap()[TAIL_GOOD];
    let td2 = train(&m, &data, &TrainConfig { nstep: 2, ..tabular_cfg(Method::TdN, 0.9) }).unwrap();
    let lql = train(&m, &data, &tabular_cfg(Method::Lql, 0.9)).unwrap();
    let q2 = td2.pair.online.peek(0)[TAIL_GOOD];
    let ql = lql.pair.online.peek(0)[TAIL_GOOD];
    let star = qs.q(0, TAIL_GOOD);
    let ok = fp.abs() <= 1e-12 && (q2 - fp).abs() <= 1e-3 && (star - 0.9).abs() <= 1e-12 && (ql - star).abs() <= 1e-3;
    (ok, format!("Q(s0, good): td-2 {q2:.6} (fixed point {fp}), lql {ql:.6}, optimum {star}"))
}

fn compute_parity(_: &mut Shared) -> Outcome {
    let mdp = build_chain::<f64>(65, RewardMode::GoalPlusOne, 0.99).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data = generate_dataset_from(&mdp, &forward_policy(65, 0.8), 20_000, 200, &[0], &mut rng).unwrap();
    let mut buf = ReplayBuffer::new(100_000, 0.99);
    buf.push_dataset(&data).unwrap();
    let a = mdp.num_actions() as u64;
    let mut ok = true;
    let mut parts = Vec::new();
    for l in [8usize, 64] {
        let learner = |method| {
            let cfg = TrainConfig {
                method,
                traj_len: l,
                repr: ReprConfig::Mlp { hidden: vec![64, 64], activation: ActivationFn::Gelu },
                ..TrainConfig::desk()
            };
            let q = cfg.repr.build::<f64, _>(mdp.num_states(), 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            Learner::new(TargetPair::new(q, 0.005).unwrap(), &cfg).unwrap()
        };
        let (mut lql, mut td) = (learner(Method::Lql), learner(Method::Td));
        let reps = 200;
        // Each LQL batch and its TD twin cover the same transitions.
        let batches: Vec<_> = (0..reps)
            .map(|_| {
                let starts: Vec<usize> = (0..16).map(|_| rng.gen_range(0..buf.len())).collect();
                let b = buf.trajectories_at(&starts, l).unwrap();
                let idx: Vec<usize> =
                    starts.iter().enumerate().flat_map(|(row, &s)| (0..b.valid_len(row)).map(move |k| s + k)).collect();
                let t = buf.trajectories_at(&idx, 1).unwrap();
                (b, t)
            })
            .collect();

        // Hinges over a built cache cost nothing.
        let (b0, t0) = &batches[0];
        let pair = &lql.pair;
        let mut hinge_extra = 0u64;
        let mut expected_gap = 0u64;
        for row in 0..b0.batch_size() {
            let c = EvalCache::build(b0, row, &pair.online, &pair.target).unwrap();
            let before = pair.eval_count();
            lql_trajectory_loss(b0, row, &c, HingeWeights::new(1.0, 1.0).unwrap(), true).unwrap();
            hinge_extra += pair.eval_count() - before;
            expected_gap += 1 + a;
        }
        let (l0, d0) = (lql.pair.eval_count(), td.pair.eval_count());
        lql.step(b0).unwrap();
        td.step(t0).unwrap();
        let (dl, dt) = (lql.pair.eval_count() - l0, td.pair.eval_count() - d0);
        ok &= hinge_extra == 0 && dl == dt + expected_gap;

        let (mut tl, mut tt) = (Duration::ZERO, Duration::ZERO);
        for (b, t) in &batches[1..] {
            let x = Instant::now();
            td.step(t).unwrap();
            tt += x.elapsed();
            let x = Instant::now();
            lql.step(b).unwrap();
            tl += x.elapsed();
        }
        let ratio = tl.as_secs_f64() / tt.as_secs_f64();
        ok &= ratio <= 1.15;
        parts.push(format!("L={l}: hinge evals {hinge_extra}, lql {dl} vs td {dt}, time ratio {ratio:.3}"));
    }
    (ok, parts.join("; "))
}

fn theory_bounds(_: &mut Shared) -> Outcome {
    let cfg = TheoryConfig::default();
    let out = verify_theory(&cfg).unwrap();
    let failed: Vec<&str> = out.checks.iter().filter(|c| !c.ok).map(|c| c.name.as_str()).collect();
    let worst = out
        .estimates
        .iter()
        .map(|(_, e)| (e.prob_violation + 3.0 * e.prob_se) / e.prob_bound)
        .fold(0.0, f64::max);
    (
        failed.is_empty(),
        format!(
            "{} cells × 2 sides, {} trials, {} checks, worst prob/bound {worst:.3}{}",
            out.estimates.len() / 2,
            cfg.trials,
            out.checks.len(),
            if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join("; ")) }
        ),
    )
}

fn telescoping(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mdps: Vec<Mdp> = (0..4).map(|i| random_stochastic(5 + i, 2 + i % 2, [0.5, 0.9, 0.95, 0.99][i], &mut rng)).collect();
    let setups: Vec<_> = mdps
        .iter()
        .map(|m| {
            let qs = value_iteration(m, 1e-13).unwrap();
            let na = m.num_actions();
            let probs: Vec<f64> = (0..m.num_states() * na).map(|_| rng.gen::<f64>() + 0.1).collect();
            let probs: Vec<f64> = probs.chunks(na).flat_map(|r| {
                let z: f64 = r.iter().sum();
                r.iter().map(move |x| x / z)
            }).collect();
            (m, qs, BehaviorPolicy::table(probs, na).unwrap())
        })
        .collect();
    let mut worst = 0.0f64;
    for t in 0..10_000 {
        let (m, qs, beh) = &setups[t % setups.len()];
        let l = rng.gen_range(1..=64);
        let path = sample_path(*m, beh, rng.gen_range(0..5), l, &mut rng);
        let z = lb_violation_signal(m, &path, qs, 0, l).unwrap() - lb_violation_telescoped(m, &path, qs, 0, l).unwrap();
        let u = ub_violation_signal(m, &path, qs, 0, l).unwrap() - ub_violation_telescoped(m, &path, qs, 0, l).unwrap();
        worst = worst.max(z.abs()).max(u.abs());
    }
    (worst <= 1e-9, format!("10000 trajectories, L up to 64, largest gap {worst:.1e}"))
}

fn q_stability(_: &mut Shared) -> Outcome {
    let n = 40;
    let mdp = build_chain::<f64>(n, RewardMode::StepMinusOne, 0.99).unwrap();
    let q_max = mdp.q_max();
    let starts: Vec<usize> = (0..n - 2).collect();
    let data = generate_dataset_from(&mdp, &forward_policy(n, 0.8), 20_000, 200, &starts, &mut ChaCha8Rng::seed_from_u64(3))
        .unwrap();
    // Every state shares one feature row per action, scaled by 1.1^s.
    let features = FeatureConfig::Aliased { group: vec![0; n], scale: (0..n).map(|s| 1.1f64.powi(s as i32)).collect() };
    let jobs: Vec<(Method, u64)> = [Method::Td, Method::Lql].iter().flat_map(|&m| (0..5).map(move |s| (m, s))).collect();
    let runs: Vec<(Method, f64, f64)> = jobs
        .par_iter()
        .map(|&(method, seed)| {
            let cfg = TrainConfig {
                method,
                traj_len: 8,
                trajs_per_batch: 16,
                protocol: Protocol::OfflineOnly,
                offline_steps: 4000,
                eval_every: 200,
                eval_episodes: 1,
                eval_max_len: 100,
                seed,
                lr: 0.003,
                tau: 0.005,
                optimizer: OptimizerConfig::adam(),
                repr: ReprConfig::Linear { features: features.clone() },
                ..TrainConfig::desk()
            };
            let run = train(&mdp, &data, &cfg).unwrap();
            let max_q = run.report.points.iter().map(|p| p.max_q).fold(f64::NEG_INFINITY, f64::max);
            // NaN counts as unbounded.
            let max_abs = run.report.points.iter().map(|p| p.max_abs_q).fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
            (method, max_q, max_abs)
        })
        .collect();
    let lql: Vec<_> = runs.iter().filter(|r| r.0 == Method::Lql).collect();
    let td: Vec<_> = runs.iter().filter(|r| r.0 == Method::Td).collect();
    let ok = lql.iter().all(|r| r.1 <= 0.05 * q_max && r.2 <= 1.05 * q_max);
    let blowups = td.iter().filter(|r| !(r.2 <= q_max)).count();
    let lql_max_q = lql.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let lql_abs = lql.iter().map(|r| r.2).fold(0.0, f64::max);
    let td_abs = td.iter().map(|r| r.2).fold(0.0, f64::max);
    (
        ok,
        format!(
            "Q_max {q_max:.0}; lql max Q {lql_max_q:.3}, max |Q| {lql_abs:.2}; td blow-up {blowups}/5 (max |Q| {td_abs:.2}, reported only)"
        ),
    )
}

struct ChainRuns {
    /// `(L, final success per seed)`.
    lql: Vec<(usize, Vec<f64>)>,
    tdn: Vec<f64>,
    traj_td: Vec<f64>,
    /// Zero-weight LQL and the trajectory-TD control agree exactly.
    identical: bool,
}

const CHAIN_SEEDS: u64 = 5;

fn lure_chain_runs() -> ChainRuns {
    let mdp = build_lure_chain::<f64>(65, 0.1, 0.99).unwrap();
    let starts: Vec<usize> = (0..64).collect();
    let data = generate_dataset_from(&mdp, &forward_policy(66, 0.9), 50_000, 200, &starts, &mut ChaCha8Rng::seed_from_u64(7))
        .unwrap();
    let cfg = |method, l: usize, lambda: f64, seed| TrainConfig {
        method,
        traj_len: l,
        nstep: 64,
        lambda_lb: lambda,
        lambda_ub: lambda,
        trajs_per_batch: 16,
        protocol: Protocol::OfflineOnly,
        offline_steps: 4000,
        eval_every: 500,
        eval_episodes: 1,
        eval_max_len: 100,
        seed,
        lr: 0.003,
        tau: 0.01,
        optimizer: OptimizerConfig::adam(),
        repr: ReprConfig::Tabular,
        ..TrainConfig::desk()
    };
    #[derive(Clone, Copy, PartialEq)]
    enum Job {
        Lql(usize),
        TdN,
        Control,
        ZeroLql,
    }
    let mut jobs = Vec::new();
    for seed in 0..CHAIN_SEEDS {
        for j in [Job::Lql(2), Job::Lql(8), Job::Lql(32), Job::Lql(64), Job::TdN, Job::Control, Job::ZeroLql] {
            jobs.push((j, seed));
        }
    }
    let results: Vec<(Job, u64, TrainRun<f64>)> = jobs
        .par_iter()
        .map(|&(j, seed)| {
            let c = match j {
                Job::Lql(l) => cfg(Method::Lql, l, 1.0, seed),
                Job::TdN => cfg(Method::TdN, 64, 1.0, seed),
                Job::Control => cfg(Method::TdTraj, 64, 0.0, seed),
                Job::ZeroLql => cfg(Method::Lql, 64, 0.0, seed),
            };
            (j, seed, train(&mdp, &data, &c).unwrap())
        })
        .collect();
    let finals = |j: Job| -> Vec<f64> {
        results.iter().filter(|r| r.0 == j).map(|r| r.2.report.last().unwrap().success_rate).collect()
    };
    let identical = (0..CHAIN_SEEDS).all(|seed| {
        let get = |j: Job| &results.iter().find(|r| r.0 == j && r.1 == seed).unwrap().2;
        let (a, b) = (get(Job::ZeroLql), get(Job::Control));
        a.pair.online.params() == b.pair.online.params()
            && a.pair.target.params() == b.pair.target.params()
            && a.report.points.iter().map(|p| p.td).eq(b.report.points.iter().map(|p| p.td))
    });
    ChainRuns {
        lql: [2, 8, 32, 64].iter().map(|&l| (l, finals(Job::Lql(l)))).collect(),
        tdn: finals(Job::TdN),
        traj_td: finals(Job::Control),
        identical,
    }
}

fn chain_runs(shared: &mut Shared) -> &ChainRuns {
    shared.chain.get_or_insert_with(lure_chain_runs)
}

fn length_scaling(shared: &mut Shared) -> Outcome {
    let runs = chain_runs(shared);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let stats: Vec<(usize, f64, f64, f64)> = runs
        .lql
        .iter()
        .map(|(l, xs)| {
            let (m, lo, hi) = bootstrap_ci(std::slice::from_ref(xs), BOOTSTRAP_ITERS, CI_LEVEL, &mut rng).unwrap();
            (*l, m, lo, hi)
        })
        .collect();
    // Non-decreasing within the interval: the next L's upper end reaches
    // the previous mean.
    let monotone = stats.windows(2).all(|w| w[1].3 >= w[0].1);
    let lql64 = stats.last().unwrap().1;
    let tdn = mean(&runs.tdn);
    let desc: Vec<String> = stats.iter().map(|(l, m, lo, hi)| format!("L={l} {m:.2} [{lo:.2}, {hi:.2}]")).collect();
    (monotone && tdn < lql64, format!("lql success {}; td-64 {tdn:.2}", desc.join(", ")))
}

fn ablation(shared: &mut Shared) -> Outcome {
    let runs = chain_runs(shared);
    let lql = mean(&runs.lql.last().unwrap().1);
    let ctl = mean(&runs.traj_td);
    (
        runs.identical && lql > ctl,
        format!(
            "zero-weight lql {} the trajectory-TD control over {CHAIN_SEEDS} seeds; success lql {lql:.2} vs control {ctl:.2}",
            if runs.identical { "matches" } else { "DIFFERS FROM" }
        ),
    )
}

#[derive(Clone, Copy, Debug)]
enum Objective {
    Td,
    NStep(usize),
    Lb,
    Ub,
    Lql,
}

fn objective(batch: &TrajectoryBatch<f64>, online: &QFunction<f64>, target: &QFunction<f64>, obj: Objective) -> (f64, EvalCache<f64>, Vec<f64>) {
    let v = batch.valid_len(0);
    let inv = 1.0 / v as f64;
    match obj {
        Objective::NStep(n) => {
            let c = EvalCache::build_nstep(batch, 0, online, target, n).unwrap();
            let t = nstep_td_loss(batch, 0, &c, 0, n).unwrap();
            (t.value, c, vec![t.dq])
        }
        Objective::Lql => {
            let c = EvalCache::build(batch, 0, online, target).unwrap();
            let (bd, dq) = lql_trajectory_loss(batch, 0, &c, HingeWeights::new(0.7, 1.3).unwrap(), false).unwrap();
            (bd.total, c, dq)
        }
        _ => {
            let c = EvalCache::build(batch, 0, online, target).unwrap();
            let (mut total, mut dq) = (0.0, Vec::new());
            for k in 0..v {
                let t = match obj {
                    Objective::Td => td_loss(batch, 0, &c, k).unwrap(),
                    Objective::Lb => lb_aggregate(batch, 0, &c, k).unwrap(),
                    _ => ub_aggregate(batch, 0, &c, k).unwrap(),
                };
                total += t.value * inv;
                dq.push(t.dq * inv);
            }
            (total, c, dq)
        }
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 { diff } else { diff / scale }
}

fn gradients(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (ns, na) = (6, 2);
    let mut worst = 0.0f64;
    let mut draws = 0;
    for obj in [Objective::Td, Objective::NStep(3), Objective::Lb, Objective::Ub, Objective::Lql] {
        for repr in 0..3 {
            for _ in 0..100 {
                let make = |rng: &mut ChaCha8Rng| match repr {
                    0 => QFunction::tabular_from(ns, na, &(0..ns * na).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>()).unwrap(),
                    1 => {
                        let table: Vec<f64> = (0..ns * na * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
                        let w: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
                        QFunction::linear(FeatureMap::from_table(ns, na, 5, table).unwrap(), Some(w)).unwrap()
                    }
                    _ => QFunction::mlp(ns, na, &[8, 8], if rng.gen() { ActivationFn::Gelu } else { ActivationFn::Tanh }, rng),
                };
                let mut online = make(&mut rng);
                let target = make(&mut rng);
                let v = rng.gen_range(2..10);
                let seg = Segment {
                    states: (0..=v).map(|_| rng.gen_range(0..ns)).collect(),
                    actions: (0..v).map(|_| rng.gen_range(0..na)).collect(),
                    rewards: (0..v).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
                    terminal_end: rng.gen(),
                    episode_id: 0,
                };
                let batch = TrajectoryBatch::from_segments(0.9, v, &[seg]).unwrap();
                let (_, cache, dq) = objective(&batch, &online, &target, obj);
                let mut grads = vec![0.0; online.num_params()];
                cache.backward(&online, &dq, &mut grads).unwrap();
                let h = 1e-5;
                let mut num = vec![0.0; online.num_params()];
                for i in 0..online.num_params() {
                    let x = online.params()[i];
                    online.params_mut()[i] = x + h;
                    let up = objective(&batch, &online, &target, obj).0;
                    online.params_mut()[i] = x - h;
                    let down = objective(&batch, &online, &target, obj).0;
                    online.params_mut()[i] = x;
                    num[i] = (up - down) / (2.0 * h);
                }
                worst = worst.max(rel_err(&grads, &num));
                draws += 1;
            }
        }
    }
    (worst < 1e-4, format!("{draws} draws over 5 terms × 3 representations, worst relative error {worst:.1e}"))
}
