mod common;

use lql_core::losses::*;
use lql_core::oracle::value_iteration;
use lql_core::qfunc::*;
use lql_core::replay::{Segment, TrajectoryBatch};
use lql_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ones() -> HingeWeights<f64> {
    HingeWeights::new(1.0, 1.0).unwrap()
}

#[test]
fn every_term_vanishes_at_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..6 {
        let ns = rng.gen_range(3..=6);
        let m = common::random_deterministic(ns, 3, 0.9, &mut rng);
        let qs = value_iteration(&m, 1e-12).unwrap();
        let q = QFunction::tabular_from(ns, 3, &qs.q).unwrap();
        for l in [2, 8] {
            let segs = common::enumerate_segments(&m, l);
            let batch = TrajectoryBatch::from_segments(0.9, l, &segs).unwrap();
            for row in 0..batch.batch_size() {
                let cache = EvalCache::build(&batch, row, &q, &q).unwrap();
                let (bd, dq) = lql_trajectory_loss(&batch, row, &cache, ones(), true).unwrap();
                let worst = bd
                    .per_pair_lb
                    .values()
                    .chain(bd.per_pair_ub.values())
                    .chain([bd.td, bd.total].iter())
                    .fold(0.0f64, |a, &b| a.max(b.abs()));
                assert!(worst <= 1e-9, "trial {trial}, L={l}, row {row}: {worst}");
                assert!(dq.iter().all(|d| d.abs() <= 1e-4));
            }
        }
    }
}

/// Independent O(L²) evaluation straight from rewards and cached values.
fn brute_force(rewards: &[f64], q: &[f64], boot: &[f64], gamma: f64, lam_ub: f64, lam_lb: f64) -> (f64, Vec<f64>) {
    let v = rewards.len();
    let g = |i: usize, j: usize| common::direct_return(rewards, gamma, i, j);
    let mut total = 0.0;
    let mut grad = vec![0.0; v];
    for k in 0..v {
        let y = rewards[k] + gamma * boot[k + 1];
        let mut loss = (q[k] - y).powi(2);
        let mut d = 2.0 * (q[k] - y);
        if k + 2 <= v {
            let n = (v - k - 1) as f64;
            let (mut s, mut ds) = (0.0, 0.0);
            for l in k + 2..=v {
                let h = (g(k, l) + gamma.powi((l - k) as i32) * boot[l] - q[k]).max(0.0);
                s += h * h;
                ds += -2.0 * h;
            }
            loss += lam_lb * s / n;
            d += lam_lb * ds / n;
        }
        if k >= 1 {
            let n = k as f64;
            let (mut s, mut ds) = (0.0, 0.0);
            for i in 1..=k {
                let c = gamma.powi((k - i) as i32);
                let h = (g(i, k) + c * q[k] - boot[i]).max(0.0);
                s += h * h;
                ds += 2.0 * h * c;
            }
            loss += lam_ub * s / n;
            d += lam_ub * ds / n;
        }
        total += loss;
        grad[k] = d / v as f64;
    }
    (total / v as f64, grad)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn trajectory_loss_matches_double_loop(
        v in 1usize..=64,
        seed in any::<u64>(),
        gi in 0usize..3,
        lam_ub in 0.0f64..2.0,
        lam_lb in 0.0f64..2.0,
        terminal in any::<bool>(),
    ) {
        let gamma = [0.5, 0.9, 0.99][gi];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = common::random_row(v, 10, 2, gamma, terminal, &mut rng);
        let q: Vec<f64> = (0..v).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut boot: Vec<f64> = (0..=v).map(|_| rng.gen_range(-3.0..3.0)).collect();
        if terminal {
            boot[v] = 0.0;
        }
        let cache = EvalCache::from_values(q.clone(), boot.clone()).unwrap();
        let w = HingeWeights::new(lam_ub, lam_lb).unwrap();
        let (bd, dq) = lql_trajectory_loss(&batch, 0, &cache, w, false).unwrap();
        let (want, want_dq) = brute_force(batch.rewards(0), &q, &boot, gamma, lam_ub, lam_lb);
        prop_assert!((bd.total - want).abs() <= 1e-9 * want.abs().max(1.0));
        for (a, b) in dq.iter().zip(&want_dq) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        prop_assert!((bd.total - (bd.td + lam_ub * bd.ub + lam_lb * bd.lb)).abs() <= 1e-9 * bd.total.abs().max(1.0));
    }

    #[test]
    fn hinges_are_one_sided(seed in any::<u64>(), v in 2usize..=16, bump in 0.01f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = common::random_row(v, 10, 2, 0.9, false, &mut rng);
        let q: Vec<f64> = (0..v).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let boot: Vec<f64> = (0..=v).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let k = rng.gen_range(0..v);
        let at = |qk: f64| {
            let mut q = q.clone();
            q[k] = qk;
            let c = EvalCache::from_values(q, boot.clone()).unwrap();
            let lb: Vec<f64> = future_index_set(k, v).map(|l| lb_penalty(&batch, 0, &c, k, l).unwrap().value).collect();
            let ub: Vec<f64> = past_index_set(k).map(|i| ub_penalty(&batch, 0, &c, i, k).unwrap().value).collect();
            (lb, ub)
        };
        let (lb0, ub0) = at(q[k]);
        let (lb_up, ub_up) = at(q[k] + bump);
        let (lb_dn, ub_dn) = at(q[k] - bump);
        for j in 0..lb0.len() {
            prop_assert!(lb_up[j] <= lb0[j] && lb_dn[j] >= lb0[j]);
        }
        for j in 0..ub0.len() {
            prop_assert!(ub_up[j] >= ub0[j] && ub_dn[j] <= ub0[j]);
        }
    }
}

#[test]
fn penalties_are_nonnegative_with_signed_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let v = rng.gen_range(2..12);
        let batch = common::random_row(v, 8, 2, 0.95, false, &mut rng);
        let q: Vec<f64> = (0..v).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let boot: Vec<f64> = (0..=v).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let c = EvalCache::from_values(q, boot).unwrap();
        for k in 0..v {
            for l in future_index_set(k, v) {
                let t = lb_penalty(&batch, 0, &c, k, l).unwrap();
                assert!(t.value >= 0.0 && t.dq <= 0.0 && (t.value == 0.0) == (t.dq == 0.0));
            }
            for i in past_index_set(k) {
                let t = ub_penalty(&batch, 0, &c, i, k).unwrap();
                assert!(t.value >= 0.0 && t.dq >= 0.0 && (t.value == 0.0) == (t.dq == 0.0));
            }
        }
    }
}

#[test]
fn invalid_pairs_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let batch = common::random_row(8, 5, 2, 0.9, false, &mut rng);
    let c = EvalCache::from_values(vec![0.0; 8], vec![0.0; 9]).unwrap();
    assert!(matches!(lb_penalty(&batch, 0, &c, 0, 1), Err(Error::InvalidIndices(_))));
    assert!(matches!(lb_penalty(&batch, 0, &c, 3, 9), Err(Error::InvalidIndices(_))));
    assert!(matches!(ub_penalty(&batch, 0, &c, 0, 3), Err(Error::InvalidIndices(_))));
    assert!(matches!(ub_penalty(&batch, 0, &c, 4, 3), Err(Error::InvalidIndices(_))));
    assert!(matches!(td_loss(&batch, 0, &c, 8), Err(Error::InvalidIndex(_))));
    assert!(matches!(HingeWeights::new(-1.0, 0.0), Err(Error::InvalidConfig(_))));
}

#[test]
fn index_set_examples() {
    assert_eq!(future_index_set(0, 8).collect::<Vec<_>>(), (2..=8).collect::<Vec<_>>());
    assert_eq!(future_index_set(6, 8).collect::<Vec<_>>(), vec![8]);
    assert_eq!(future_index_set(7, 8).count(), 0);
    assert_eq!(past_index_set(0).count(), 0);
    assert_eq!(past_index_set(3).collect::<Vec<_>>(), vec![1, 2, 3]);
    for k in 1..20 {
        assert!(past_index_set(k).contains(&k));
    }
}

#[test]
fn aggregates_of_one_equal_the_single_penalty() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let batch = common::random_row(8, 5, 2, 0.9, false, &mut rng);
    let q: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let boot: Vec<f64> = (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let c = EvalCache::from_values(q, boot).unwrap();
    assert_eq!(lb_aggregate(&batch, 0, &c, 6).unwrap(), lb_penalty(&batch, 0, &c, 6, 8).unwrap());
    assert_eq!(ub_aggregate(&batch, 0, &c, 1).unwrap(), ub_penalty(&batch, 0, &c, 1, 1).unwrap());
    assert_eq!(lb_aggregate(&batch, 0, &c, 7).unwrap().value, 0.0);
    assert_eq!(ub_aggregate(&batch, 0, &c, 0).unwrap().value, 0.0);
}

#[test]
fn one_step_target_equals_td() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..100 {
        let v = rng.gen_range(1..10);
        let batch = common::random_row(v, 6, 2, 0.9, rng.gen(), &mut rng);
        let q: Vec<f64> = (0..v).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut boot: Vec<f64> = (0..=v).map(|_| rng.gen_range(-2.0..2.0)).collect();
        if batch.terminal_end(0) {
            boot[v] = 0.0;
        }
        let c = EvalCache::from_values(q, boot).unwrap();
        for k in 0..v {
            let a = nstep_td_loss(&batch, 0, &c, k, 1).unwrap();
            let b = td_loss(&batch, 0, &c, k).unwrap();
            assert!((a.value - b.value).abs() <= 1e-12 && (a.dq - b.dq).abs() <= 1e-12);
        }
    }
}

#[test]
fn hinges_add_no_evaluations() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let online = QFunction::<f64>::mlp(10, 3, &[8, 8], ActivationFn::Gelu, &mut rng);
    let target = QFunction::<f64>::mlp(10, 3, &[8, 8], ActivationFn::Gelu, &mut rng);
    for l in [1, 8, 64] {
        let batch = common::random_row(l, 10, 3, 0.99, false, &mut rng);
        online.reset_eval_count();
        target.reset_eval_count();
        let cache = EvalCache::build(&batch, 0, &online, &target).unwrap();
        let (on, tg) = (online.eval_count(), target.eval_count());
        assert_eq!(on, l as u64);
        assert_eq!(tg, ((l + 1) * (1 + 3)) as u64);
        let _ = td_trajectory_loss(&batch, 0, &cache).unwrap();
        let _ = lql_trajectory_loss(&batch, 0, &cache, ones(), true).unwrap();
        for k in 0..l {
            let _ = lb_aggregate(&batch, 0, &cache, k).unwrap();
            let _ = ub_aggregate(&batch, 0, &cache, k).unwrap();
        }
        assert_eq!((online.eval_count(), target.eval_count()), (on, tg));
    }
}

#[test]
fn tabular_hinge_gradients_stay_on_their_cell() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let table: Vec<f64> = (0..20).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let online = QFunction::tabular_from(10, 2, &table).unwrap();
        let target = QFunction::tabular_from(10, 2, &table.iter().map(|x| x + rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
        let batch = common::random_row(6, 10, 2, 0.9, false, &mut rng);
        let c = EvalCache::build(&batch, 0, &online, &target).unwrap();
        for k in 0..6 {
            let cell = batch.state(0, k) * 2 + batch.action(0, k);
            let terms: Vec<Term<f64>> = future_index_set(k, 6)
                .map(|l| lb_penalty(&batch, 0, &c, k, l).unwrap())
                .chain(past_index_set(k).map(|i| ub_penalty(&batch, 0, &c, i, k).unwrap()))
                .collect();
            for t in terms {
                let mut dq = vec![0.0; 6];
                dq[k] = t.dq;
                let mut grads = vec![0.0; 20];
                c.backward(&online, &dq, &mut grads).unwrap();
                for (j, g) in grads.iter().enumerate() {
                    if j != cell {
                        assert_eq!(*g, 0.0);
                    }
                }
                assert_eq!(grads[cell], t.dq);
            }
        }
    }
}

/// Which scalar objective to differentiate.
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
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 { diff } else { diff / scale }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let (ns, na) = (6, 2);
    for obj in [Objective::Td, Objective::NStep(3), Objective::Lb, Objective::Ub, Objective::Lql] {
        for repr in 0..3 {
            let mut worst = 0.0f64;
            for _ in 0..100 {
                let make = |rng: &mut ChaCha8Rng| match repr {
                    0 => QFunction::tabular_from(ns, na, &(0..ns * na).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>()).unwrap(),
                    1 => {
                        let table: Vec<f64> = (0..ns * na * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
                        let w: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
                        QFunction::linear(FeatureMap::from_table(ns, na, 5, table).unwrap(), Some(w)).unwrap()
                    }
                    _ => QFunction::mlp(ns, na, &[6, 6], ActivationFn::Gelu, rng),
                };
                let mut online = make(&mut rng);
                let target = make(&mut rng);
                let batch = common::random_row(rng.gen_range(2..8), ns, na, 0.9, rng.gen(), &mut rng);
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
            }
            assert!(worst < 1e-4, "{obj:?} on repr {repr}: {worst}");
        }
    }
}

#[test]
fn direct_substitution_examples() {
    // G_{0:2} = 0.25 with a zero bootstrap at the terminal and Q = 0.1.
    let seg = Segment {
        states: vec![0, 1, 2],
        actions: vec![0, 0],
        rewards: vec![0.0, 0.5],
        terminal_end: true,
        episode_id: 0,
    };
    let batch = TrajectoryBatch::from_segments(0.5, 2, &[seg]).unwrap();
    let c = EvalCache::from_values(vec![0.1, 0.0], vec![0.0, 0.0, 0.0]).unwrap();
    assert!((lb_penalty(&batch, 0, &c, 0, 2).unwrap().value - 0.0225f64).abs() < 1e-15);
    let c = EvalCache::from_values(vec![0.0, 3.0], vec![0.0, 2.0, 0.0]).unwrap();
    assert_eq!(ub_penalty(&batch, 0, &c, 1, 1).unwrap().value, 1.0);
}
