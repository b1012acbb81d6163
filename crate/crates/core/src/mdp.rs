//! Finite discrete MDPs, environment stepping, behavior policies and offline
//! dataset generation.

use std::collections::VecDeque;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

const ROW_SUM_TOL: f64 = 1e-9;

/// How rewards are assigned by the builders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    /// `+1` on the transition that enters the goal, `0` otherwise.
    GoalPlusOne,
    /// `-1` per step, `0` on the transition that enters the goal.
    StepMinusOne,
}

impl RewardMode {
    fn reward<T: Scalar>(self, enters_goal: bool) -> T {
        match (self, enters_goal) {
            (RewardMode::GoalPlusOne, true) => T::one(),
            (RewardMode::GoalPlusOne, false) => T::zero(),
            (RewardMode::StepMinusOne, true) => T::zero(),
            (RewardMode::StepMinusOne, false) => -T::one(),
        }
    }
}

/// Chain action ids. `Back` is id 0 so that all-zero value tables fail.
pub const CHAIN_BACK: usize = 0;
pub const CHAIN_FORWARD: usize = 1;

/// Grid action ids.
pub const GRID_UP: usize = 0;
pub const GRID_DOWN: usize = 1;
pub const GRID_LEFT: usize = 2;
pub const GRID_RIGHT: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MdpDoc<T> {
    num_states: usize,
    num_actions: usize,
    /// Row-major `(s, a, s')`.
    transition: Vec<T>,
    /// Row-major `(s, a)`.
    reward: Vec<T>,
    terminal: Vec<bool>,
    gamma: T,
    r_max: T,
    #[serde(default)]
    start: usize,
    /// Success states for evaluation; defaults to `terminal`.
    #[serde(default)]
    goal: Option<Vec<bool>>,
}

/// A finite MDP with a declared reward bound and a start state.
///
/// Immutable after construction; all builders validate the row-sum, reward
/// bound and absorbing-terminal invariants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MdpDoc<T>", into = "MdpDoc<T>")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct FiniteMdp<T: Scalar> {
    num_states: usize,
    num_actions: usize,
    transition: Vec<T>,
    reward: Vec<T>,
    terminal: Vec<bool>,
    gamma: T,
    r_max: T,
    start: usize,
    goal: Vec<bool>,
    /// Sparse successor lists per `(s, a)`, derived from `transition`.
    successors: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> TryFrom<MdpDoc<T>> for FiniteMdp<T> {
    type Error = Error;

    fn try_from(doc: MdpDoc<T>) -> Result<Self> {
        let m = FiniteMdp::new(
            doc.num_states,
            doc.num_actions,
            doc.transition,
            doc.reward,
            doc.terminal,
            doc.gamma,
            doc.r_max,
            doc.start,
        )?;
        match doc.goal {
            Some(g) => m.with_goals(g),
            None => Ok(m),
        }
    }
}

impl<T: Scalar> From<FiniteMdp<T>> for MdpDoc<T> {
    fn from(m: FiniteMdp<T>) -> Self {
        let goal = (m.goal != m.terminal).then(|| m.goal.clone());
        MdpDoc {
            num_states: m.num_states,
            num_actions: m.num_actions,
            transition: m.transition,
            reward: m.reward,
            terminal: m.terminal,
            gamma: m.gamma,
            r_max: m.r_max,
            start: m.start,
            goal,
        }
    }
}

impl<T: Scalar> FiniteMdp<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<T>,
        reward: Vec<T>,
        terminal: Vec<bool>,
        gamma: T,
        r_max: T,
        start: usize,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp("empty state or action set".into()));
        }
        if transition.len() != num_states * num_actions * num_states {
            return Err(Error::InvalidMdp(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                num_states * num_actions * num_states
            )));
        }
        if reward.len() != num_states * num_actions || terminal.len() != num_states {
            return Err(Error::InvalidMdp("reward/terminal shape mismatch".into()));
        }
        if !(gamma >= T::zero() && gamma < T::one()) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} outside [0, 1)")));
        }
        if !(r_max >= T::zero()) {
            return Err(Error::InvalidMdp(format!("negative r_max {r_max}")));
        }
        if start >= num_states {
            return Err(Error::InvalidMdp(format!("start state {start} out of range")));
        }
        let tol = T::of(ROW_SUM_TOL);
        let mut successors = Vec::with_capacity(num_states * num_actions);
        for s in 0..num_states {
            for a in 0..num_actions {
                let row = &transition[(s * num_actions + a) * num_states..][..num_states];
                if row.iter().any(|&p| !(p >= T::zero())) {
                    return Err(Error::InvalidMdp(format!("negative probability at ({s},{a})")));
                }
                let sum: T = row.iter().copied().sum();
                if (sum - T::one()).abs() > tol {
                    return Err(Error::InvalidMdp(format!("row ({s},{a}) sums to {sum}")));
                }
                let r = reward[s * num_actions + a];
                if !(r.abs() <= r_max) {
                    return Err(Error::InvalidMdp(format!(
                        "|reward({s},{a})| = {} exceeds r_max {r_max}",
                        r.abs()
                    )));
                }
                if terminal[s] && (row[s] != T::one() || r != T::zero()) {
                    return Err(Error::InvalidMdp(format!(
                        "terminal state {s} must self-loop with reward 0"
                    )));
                }
                successors.push(
                    row.iter()
                        .enumerate()
                        .filter(|(_, &p)| p > T::zero())
                        .map(|(sn, &p)| (sn, p))
                        .collect(),
                );
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            transition,
            reward,
            goal: terminal.clone(),
            terminal,
            gamma,
            r_max,
            start,
            successors,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn r_max(&self) -> T {
        self.r_max
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_mask(&self) -> &[bool] {
        &self.terminal
    }

    /// Reaching `s` counts as success. Defaults to the terminal states.
    pub fn is_goal(&self, s: usize) -> bool {
        self.goal[s]
    }

    /// Same MDP with an explicit success mask.
    pub fn with_goals(&self, goal: Vec<bool>) -> Result<Self> {
        if goal.len() != self.num_states {
            return Err(Error::InvalidMdp("goal mask shape mismatch".into()));
        }
        let mut m = self.clone();
        m.goal = goal;
        Ok(m)
    }

    /// `P(s' | s, a)`.
    pub fn prob(&self, s: usize, a: usize, s_next: usize) -> T {
        self.transition[(s * self.num_actions + a) * self.num_states + s_next]
    }

    /// The dense row `P(· | s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[T] {
        &self.transition[(s * self.num_actions + a) * self.num_states..][..self.num_states]
    }

    /// Nonzero entries of `P(· | s, a)`.
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, T)] {
        &self.successors[s * self.num_actions + a]
    }

    pub fn reward(&self, s: usize, a: usize) -> T {
        self.reward[s * self.num_actions + a]
    }

    pub fn transition_tensor(&self) -> &[T] {
        &self.transition
    }

    pub fn reward_table(&self) -> &[T] {
        &self.reward
    }

    /// Same MDP with a different start state.
    pub fn with_start(&self, start: usize) -> Result<Self> {
        if start >= self.num_states {
            return Err(Error::InvalidMdp(format!("start state {start} out of range")));
        }
        let mut m = self.clone();
        m.start = start;
        Ok(m)
    }

    /// `r_max / (1 - gamma)`.
    pub fn q_max(&self) -> T {
        self.r_max / (T::one() - self.gamma)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Builds a deterministic `(s, a) -> s'` MDP from a successor function.
fn deterministic<T: Scalar>(
    num_states: usize,
    num_actions: usize,
    terminal: Vec<bool>,
    gamma: T,
    start: usize,
    mode: RewardMode,
    next: impl Fn(usize, usize) -> usize,
) -> Result<FiniteMdp<T>> {
    let mut transition = vec![T::zero(); num_states * num_actions * num_states];
    let mut reward = vec![T::zero(); num_states * num_actions];
    for s in 0..num_states {
        for a in 0..num_actions {
            let sn = if terminal[s] { s } else { next(s, a) };
            transition[(s * num_actions + a) * num_states + sn] = T::one();
            if !terminal[s] {
                reward[s * num_actions + a] = mode.reward(terminal[sn]);
            }
        }
    }
    FiniteMdp::new(num_states, num_actions, transition, reward, terminal, gamma, T::one(), start)
}

/// Linear chain `0 - 1 - ... - length-1` with the goal (terminal) at the far
/// end. Actions are [`CHAIN_BACK`] and [`CHAIN_FORWARD`]; backing off state 0
/// stays in place.
pub fn build_chain<T: Scalar>(length: usize, reward_mode: RewardMode, gamma: T) -> Result<FiniteMdp<T>> {
    if length < 2 {
        return Err(Error::InvalidMdp(format!("chain length {length} < 2")));
    }
    let mut terminal = vec![false; length];
    terminal[length - 1] = true;
    deterministic(length, 2, terminal, gamma, 0, reward_mode, |s, a| match a {
        CHAIN_FORWARD => s + 1,
        _ => s.saturating_sub(1),
    })
}

/// Chain `0 - ... - length-1` (goal at the end) plus a terminal sink at
/// index `length`. Action 0 quits into the sink for `lure` reward; action 1
/// moves forward and pays 1 on entering the goal. Only the far end counts
/// as success.
pub fn build_lure_chain<T: Scalar>(length: usize, lure: T, gamma: T) -> Result<FiniteMdp<T>> {
    if length < 2 {
        return Err(Error::InvalidMdp(format!("lure chain length {length} < 2")));
    }
    if !(lure >= T::zero() && lure <= T::one()) {
        return Err(Error::InvalidMdp(format!("lure reward {lure} outside [0, 1]")));
    }
    let (ns, na) = (length + 1, 2);
    let (goal, sink) = (length - 1, length);
    let mut transition = vec![T::zero(); ns * na * ns];
    let mut reward = vec![T::zero(); ns * na];
    let mut terminal = vec![false; ns];
    terminal[goal] = true;
    terminal[sink] = true;
    for s in 0..ns {
        for a in 0..na {
            let sn = match (terminal[s], a) {
                (true, _) => s,
                (false, 0) => sink,
                _ => s + 1,
            };
            transition[(s * na + a) * ns + sn] = T::one();
            if !terminal[s] {
                reward[s * na + a] = if a == 0 { lure } else if sn == goal { T::one() } else { T::zero() };
            }
        }
    }
    let m = FiniteMdp::new(ns, na, transition, reward, terminal, gamma, T::one(), 0)?;
    let mut goals = vec![false; ns];
    goals[goal] = true;
    m.with_goals(goals)
}

/// Three states: `0 → 1` on [`TAIL_GOOD`] (0 reward), and from 1 both
/// actions end in terminal 2, [`TAIL_GOOD`] paying 1 and [`TAIL_BAD`] 0.
/// [`TAIL_BAD`] at state 0 ends the episode with 0.
pub fn build_bad_tail<T: Scalar>(gamma: T) -> Result<FiniteMdp<T>> {
    let terminal = vec![false, false, true];
    let mut transition = vec![T::zero(); 3 * 2 * 3];
    let mut reward = vec![T::zero(); 3 * 2];
    let next = |s: usize, a: usize| if (s, a) == (0, TAIL_GOOD) { 1 } else { 2 };
    for s in 0..3 {
        for a in 0..2 {
            transition[(s * 2 + a) * 3 + next(s, a)] = T::one();
        }
    }
    reward[2 + TAIL_GOOD] = T::one();
    FiniteMdp::new(3, 2, transition, reward, terminal, gamma, T::one(), 0)
}

pub const TAIL_GOOD: usize = 0;
pub const TAIL_BAD: usize = 1;

/// Rectangular maze layout. `#` is a wall, `S` the start, `G` the goal, any
/// other character a free cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub rows: Vec<String>,
}

impl GridLayout {
    pub fn new<S: AsRef<str>>(rows: &[S]) -> Self {
        Self {
            rows: rows.iter().map(|r| r.as_ref().to_string()).collect(),
        }
    }

    /// Open `height × width` room, start top-left, goal bottom-right.
    pub fn open(height: usize, width: usize) -> Self {
        let mut rows = vec![".".repeat(width); height];
        rows[0].replace_range(0..1, "S");
        let w = width - 1;
        rows[height - 1].replace_range(w..w + 1, "G");
        Self { rows }
    }
}

/// Grid cells kept after dropping walls, in row-major order.
#[derive(Debug, Clone)]
pub struct GridMaze<T: Scalar> {
    pub mdp: FiniteMdp<T>,
    /// `(row, col)` of every state id.
    pub cells: Vec<(usize, usize)>,
}

/// Four-action gridworld ([`GRID_UP`], [`GRID_DOWN`], [`GRID_LEFT`],
/// [`GRID_RIGHT`]). Moving into a wall or off the grid stays in place.
pub fn build_gridmaze<T: Scalar>(
    layout: &GridLayout,
    reward_mode: RewardMode,
    gamma: T,
) -> Result<GridMaze<T>> {
    let height = layout.rows.len();
    if height == 0 {
        return Err(Error::InvalidMdp("empty layout".into()));
    }
    let grid: Vec<Vec<char>> = layout.rows.iter().map(|r| r.chars().collect()).collect();
    let width = grid[0].len();
    if width == 0 || grid.iter().any(|r| r.len() != width) {
        return Err(Error::InvalidMdp("layout is not rectangular".into()));
    }
    let mut id = vec![vec![None; width]; height];
    let mut cells = Vec::new();
    let (mut start, mut goal) = (None, None);
    for (i, row) in grid.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == '#' {
                continue;
            }
            id[i][j] = Some(cells.len());
            match c {
                'S' if start.is_none() => start = Some(cells.len()),
                'G' if goal.is_none() => goal = Some(cells.len()),
                'S' | 'G' => return Err(Error::InvalidMdp(format!("duplicate '{c}' in layout"))),
                _ => {}
            }
            cells.push((i, j));
        }
    }
    let (start, goal) = match (start, goal) {
        (Some(s), Some(g)) => (s, g),
        _ => return Err(Error::InvalidMdp("layout needs one 'S' and one 'G'".into())),
    };
    let neighbour = |s: usize, a: usize| -> usize {
        let (i, j) = cells[s];
        let (ni, nj) = match a {
            GRID_UP => (i.wrapping_sub(1), j),
            GRID_DOWN => (i + 1, j),
            GRID_LEFT => (i, j.wrapping_sub(1)),
            _ => (i, j + 1),
        };
        if ni < height && nj < width {
            id[ni][nj].unwrap_or(s)
        } else {
            s
        }
    };
    // Reachability of the goal from the start.
    let mut seen = vec![false; cells.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(s) = queue.pop_front() {
        if s == goal {
            break;
        }
        for a in 0..4 {
            let n = neighbour(s, a);
            if !seen[n] {
                seen[n] = true;
                queue.push_back(n);
            }
        }
    }
    if !seen[goal] {
        return Err(Error::InvalidMdp("goal unreachable from start".into()));
    }
    let mut terminal = vec![false; cells.len()];
    terminal[goal] = true;
    let mdp = deterministic(cells.len(), 4, terminal, gamma, start, reward_mode, neighbour)?;
    Ok(GridMaze { mdp, cells })
}

/// With probability `sigma` the executed action is replaced by a uniformly
/// random one. Rewards stay attached to the chosen action.
pub fn apply_slip_noise<T: Scalar>(mdp: &FiniteMdp<T>, sigma: T) -> Result<FiniteMdp<T>> {
    if !(sigma >= T::zero() && sigma <= T::one()) {
        return Err(Error::InvalidMdp(format!("slip probability {sigma} outside [0, 1]")));
    }
    if sigma == T::zero() {
        return Ok(mdp.clone());
    }
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    let keep = T::one() - sigma;
    let spread = sigma / T::of_usize(na);
    let mut transition = vec![T::zero(); mdp.transition.len()];
    for s in 0..ns {
        let mut mean = vec![T::zero(); ns];
        for b in 0..na {
            for (m, &p) in mean.iter_mut().zip(mdp.row(s, b)) {
                *m += p;
            }
        }
        for a in 0..na {
            let out = &mut transition[(s * na + a) * ns..][..ns];
            for ((o, &p), &m) in out.iter_mut().zip(mdp.row(s, a)).zip(&mean) {
                *o = keep * p + spread * m;
            }
        }
    }
    FiniteMdp::new(
        ns,
        na,
        transition,
        mdp.reward.clone(),
        mdp.terminal.clone(),
        mdp.gamma,
        mdp.r_max,
        mdp.start,
    )
}

/// One environment step. Returns `(s_next, r, done)`.
pub fn step<T: Scalar, R: Rng + ?Sized>(
    mdp: &FiniteMdp<T>,
    s: usize,
    a: usize,
    rng: &mut R,
) -> Result<(usize, T, bool)> {
    if s >= mdp.num_states || a >= mdp.num_actions {
        return Err(Error::InvalidCall(format!("({s},{a}) out of range")));
    }
    if mdp.terminal[s] {
        return Err(Error::InvalidCall(format!("stepping terminal state {s}")));
    }
    let s_next = sample_successor(mdp.successors(s, a), rng);
    Ok((s_next, mdp.reward(s, a), mdp.terminal[s_next]))
}

/// Samples from a sparse distribution; always consumes exactly one uniform.
pub(crate) fn sample_successor<T: Scalar, R: Rng + ?Sized>(succ: &[(usize, T)], rng: &mut R) -> usize {
    let u = T::of(rng.gen::<f64>());
    let mut acc = T::zero();
    for &(sn, p) in succ {
        acc += p;
        if u < acc {
            return sn;
        }
    }
    succ.last().map(|&(sn, _)| sn).expect("nonempty row")
}

/// Data-collection policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub enum BehaviorPolicy<T: Scalar> {
    Uniform { num_actions: usize },
    /// Greedy w.r.t. `q_ref` (row-major `(s, a)`, ties to the lowest id)
    /// with probability `1 - epsilon`, uniform otherwise.
    EpsilonGreedy { q_ref: Vec<T>, num_actions: usize, epsilon: T },
    /// Explicit action distribution per state, row-major `(s, a)`.
    Table { probs: Vec<T>, num_actions: usize },
}

impl<T: Scalar> BehaviorPolicy<T> {
    pub fn uniform(num_actions: usize) -> Self {
        Self::Uniform { num_actions }
    }

    pub fn epsilon_greedy(q_ref: Vec<T>, num_actions: usize, epsilon: T) -> Result<Self> {
        if !(epsilon >= T::zero() && epsilon <= T::one()) || !q_ref.len().is_multiple_of(num_actions) {
            return Err(Error::InvalidInput("bad epsilon-greedy policy".into()));
        }
        Ok(Self::EpsilonGreedy {
            q_ref,
            num_actions,
            epsilon,
        })
    }

    pub fn table(probs: Vec<T>, num_actions: usize) -> Result<Self> {
        if num_actions == 0 || !probs.len().is_multiple_of(num_actions) {
            return Err(Error::InvalidInput("probability table shape".into()));
        }
        for (s, row) in probs.chunks(num_actions).enumerate() {
            let sum: T = row.iter().copied().sum();
            if row.iter().any(|&p| !(p >= T::zero())) || (sum - T::one()).abs() > T::of(ROW_SUM_TOL) {
                return Err(Error::InvalidInput(format!("action probabilities at state {s} sum to {sum}")));
            }
        }
        Ok(Self::Table { probs, num_actions })
    }

    pub fn num_actions(&self) -> usize {
        match self {
            Self::Uniform { num_actions }
            | Self::EpsilonGreedy { num_actions, .. }
            | Self::Table { num_actions, .. } => *num_actions,
        }
    }

    /// Action distribution at `s`.
    pub fn probs(&self, s: usize) -> Vec<T> {
        let na = self.num_actions();
        match self {
            Self::Uniform { .. } => vec![T::one() / T::of_usize(na); na],
            Self::EpsilonGreedy { q_ref, epsilon, .. } => {
                let g = argmax(&q_ref[s * na..][..na]);
                let mut p = vec![*epsilon / T::of_usize(na); na];
                p[g] += T::one() - *epsilon;
                p
            }
            Self::Table { probs, .. } => probs[s * na..][..na].to_vec(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        let p = self.probs(s);
        let u = T::of(rng.gen::<f64>());
        let mut acc = T::zero();
        for (a, &pa) in p.iter().enumerate() {
            acc += pa;
            if u < acc {
                return a;
            }
        }
        // Rounding left a sliver; take the last action with mass.
        p.iter().rposition(|&x| x > T::zero()).unwrap_or(0)
    }
}

/// Index of the maximum, ties to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One logged step. Field order is the CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Transition<T: Scalar> {
    pub episode_id: u64,
    pub step_index: u64,
    pub s: usize,
    pub a: usize,
    pub r: T,
    pub s_next: usize,
    /// `s_next` is terminal. Time-limit cuts are logged with `done = false`.
    pub done: bool,
}

/// Rolls out episodes from `mdp.start()` until `num_transitions` are logged.
pub fn generate_dataset<T: Scalar, R: Rng + ?Sized>(
    mdp: &FiniteMdp<T>,
    policy: &BehaviorPolicy<T>,
    num_transitions: usize,
    max_episode_len: usize,
    rng: &mut R,
) -> Result<Vec<Transition<T>>> {
    generate_dataset_from(mdp, policy, num_transitions, max_episode_len, &[mdp.start()], rng)
}

/// Like [`generate_dataset`], with each episode starting at a state drawn
/// uniformly from `starts` (no draw when there is only one).
pub fn generate_dataset_from<T: Scalar, R: Rng + ?Sized>(
    mdp: &FiniteMdp<T>,
    policy: &BehaviorPolicy<T>,
    num_transitions: usize,
    max_episode_len: usize,
    starts: &[usize],
    rng: &mut R,
) -> Result<Vec<Transition<T>>> {
    if num_transitions == 0 || max_episode_len == 0 {
        return Err(Error::InvalidInput("need at least one transition per episode and dataset".into()));
    }
    if policy.num_actions() != mdp.num_actions() {
        return Err(Error::InvalidInput("policy/MDP action count mismatch".into()));
    }
    if starts.is_empty() {
        return Err(Error::InvalidInput("no start states".into()));
    }
    if let Some(&bad) = starts.iter().find(|&&s| s >= mdp.num_states() || mdp.is_terminal(s)) {
        return Err(Error::InvalidInput(format!("start state {bad} is terminal or out of range")));
    }
    let mut out = Vec::with_capacity(num_transitions);
    let mut episode_id = 0u64;
    while out.len() < num_transitions {
        let mut s = if starts.len() == 1 {
            starts[0]
        } else {
            starts[rng.gen_range(0..starts.len())]
        };
        for t in 0..max_episode_len {
            let a = policy.sample(s, rng);
            let (s_next, r, done) = step(mdp, s, a, rng)?;
            out.push(Transition {
                episode_id,
                step_index: t as u64,
                s,
                a,
                r,
                s_next,
                done,
            });
            if done || out.len() == num_transitions {
                break;
            }
            s = s_next;
        }
        episode_id += 1;
    }
    Ok(out)
}

/// Shifts every episode id by `offset` (for concatenating datasets).
pub fn offset_episode_ids<T: Scalar>(data: &mut [Transition<T>], offset: u64) {
    for t in data {
        t.episode_id += offset;
    }
}

pub fn write_dataset_csv<T: Scalar, W: Write>(data: &[Transition<T>], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for t in data {
        wr.serialize(t)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_dataset_csv<T: Scalar, R: Read>(r: R) -> Result<Vec<Transition<T>>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["episode_id", "step_index", "s", "a", "r", "s_next", "done"] {
        return Err(Error::InvalidInput(format!("unexpected dataset header {headers:?}")));
    }
    rd.deserialize().map(|row| row.map_err(Error::from)).collect()
}
