#![allow(dead_code)]

use lql_core::mdp::{FiniteMdp, Transition};
use lql_core::replay::{Segment, TrajectoryBatch};
use rand::Rng;

/// Deterministic MDP with random successors and rewards in `[-1, 1]`.
/// State `ns - 1` is terminal; the others are not.
pub fn random_deterministic<R: Rng>(ns: usize, na: usize, gamma: f64, rng: &mut R) -> FiniteMdp<f64> {
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

/// Random stochastic MDP (dense rows), last state terminal.
pub fn random_stochastic<R: Rng>(ns: usize, na: usize, gamma: f64, rng: &mut R) -> FiniteMdp<f64> {
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

/// Every segment of up to `len` steps from every non-terminal state of a
/// deterministic MDP, over every action sequence. Segments stop at terminals.
pub fn enumerate_segments(mdp: &FiniteMdp<f64>, len: usize) -> Vec<Segment<f64>> {
    let mut out = Vec::new();
    for s0 in (0..mdp.num_states()).filter(|&s| !mdp.is_terminal(s)) {
        let mut stack = vec![(vec![s0], Vec::new(), Vec::new())];
        while let Some((states, actions, rewards)) = stack.pop() {
            let s = *states.last().unwrap();
            if actions.len() == len || (!actions.is_empty() && mdp.is_terminal(s)) {
                out.push(Segment {
                    states,
                    actions,
                    rewards,
                    terminal_end: mdp.is_terminal(s),
                    episode_id: 0,
                });
                continue;
            }
            for a in 0..mdp.num_actions() {
                let sn = mdp.successors(s, a)[0].0;
                let (mut st, mut ac, mut rw) = (states.clone(), actions.clone(), rewards.clone());
                st.push(sn);
                ac.push(a);
                rw.push(mdp.reward(s, a));
                stack.push((st, ac, rw));
            }
        }
    }
    out
}

/// One random row of `v` steps over `ns` states with rewards in `[-1, 1]`.
pub fn random_row<R: Rng>(v: usize, ns: usize, na: usize, gamma: f64, terminal_end: bool, rng: &mut R) -> TrajectoryBatch<f64> {
    let seg = Segment {
        states: (0..=v).map(|_| rng.gen_range(0..ns)).collect(),
        actions: (0..v).map(|_| rng.gen_range(0..na)).collect(),
        rewards: (0..v).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
        terminal_end,
        episode_id: 0,
    };
    TrajectoryBatch::from_segments(gamma, v, &[seg]).unwrap()
}

/// `Σ_{u=i}^{j-1} γ^{u-i} r_u` by direct summation.
pub fn direct_return(rewards: &[f64], gamma: f64, i: usize, j: usize) -> f64 {
    (i..j).map(|u| gamma.powi((u - i) as i32) * rewards[u]).sum()
}

pub fn is_supported(mdp: &FiniteMdp<f64>, t: &Transition<f64>) -> bool {
    mdp.prob(t.s, t.a, t.s_next) > 0.0
}
