//! Episode replay buffer with contiguous trajectory sampling and O(1)
//! discounted partial returns.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::Transition;
use crate::Scalar;

/// `pow[j] = γ^j`, built by repeated multiplication so every consumer sees
/// the same bits.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaPowers<T: Scalar> {
    gamma: T,
    pow: Vec<T>,
}

impl<T: Scalar> GammaPowers<T> {
    pub fn new(gamma: T, max_power: usize) -> Self {
        let mut pow = Vec::with_capacity(max_power + 1);
        let mut g = T::one();
        for _ in 0..=max_power {
            pow.push(g);
            g *= gamma;
        }
        Self { gamma, pow }
    }

    #[inline]
    pub fn get(&self, j: usize) -> T {
        self.pow[j]
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn max_power(&self) -> usize {
        self.pow.len() - 1
    }
}

/// A contiguous slice of one episode, used to build batches by hand.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T: Scalar> {
    /// `actions.len() + 1` states.
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<T>,
    /// The final state is terminal.
    pub terminal_end: bool,
    pub episode_id: u64,
}

/// `batch` rows of up to `len` consecutive transitions of one episode each.
///
/// Row `b` is valid for `k < valid_len(b)`; trailing entries are masked
/// (zero reward, repeated last state). `prefix[j] = Σ_{u<j} γ^u r_u` and
/// `suffix[j] = Σ_{j ≤ u < valid_len} γ^{u-j} r_u`.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch<T: Scalar> {
    batch: usize,
    len: usize,
    states: Vec<usize>,
    actions: Vec<usize>,
    rewards: Vec<T>,
    valid_len: Vec<usize>,
    terminal_end: Vec<bool>,
    episode_ids: Vec<u64>,
    prefix: Vec<T>,
    suffix: Vec<T>,
    pow: GammaPowers<T>,
}

impl<T: Scalar> TrajectoryBatch<T> {
    /// Builds a batch from explicit segments, each at most `len` long.
    pub fn from_segments(gamma: T, len: usize, segments: &[Segment<T>]) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidInput("trajectory length must be at least 1".into()));
        }
        let mut out = Self::empty(gamma, len);
        for seg in segments {
            let v = seg.actions.len();
            if v == 0 || v > len || seg.states.len() != v + 1 || seg.rewards.len() != v {
                return Err(Error::InvalidInput(format!(
                    "segment of {v} actions does not fit length {len}"
                )));
            }
            out.push_row(&seg.states, &seg.actions, &seg.rewards, seg.terminal_end, seg.episode_id);
        }
        Ok(out)
    }

    fn empty(gamma: T, len: usize) -> Self {
        Self {
            batch: 0,
            len,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            valid_len: Vec::new(),
            terminal_end: Vec::new(),
            episode_ids: Vec::new(),
            prefix: Vec::new(),
            suffix: Vec::new(),
            pow: GammaPowers::new(gamma, len),
        }
    }

    fn push_row(&mut self, states: &[usize], actions: &[usize], rewards: &[T], terminal_end: bool, episode_id: u64) {
        let (len, v) = (self.len, actions.len());
        let last = states[v];
        self.states.extend_from_slice(states);
        self.states.extend(std::iter::repeat_n(last, len - v));
        self.actions.extend_from_slice(actions);
        self.actions.extend(std::iter::repeat_n(0, len - v));
        self.rewards.extend_from_slice(rewards);
        self.rewards.extend(std::iter::repeat_n(T::zero(), len - v));

        let mut acc = T::zero();
        self.prefix.push(acc);
        for j in 0..len {
            acc += self.pow.get(j) * if j < v { rewards[j] } else { T::zero() };
            self.prefix.push(acc);
        }
        let mut suffix = vec![T::zero(); len + 1];
        for j in (0..v).rev() {
            suffix[j] = rewards[j] + self.pow.gamma() * suffix[j + 1];
        }
        self.suffix.extend(suffix);

        self.valid_len.push(v);
        self.terminal_end.push(terminal_end);
        self.episode_ids.push(episode_id);
        self.batch += 1;
    }

    /// Row-wise concatenation of two batches of equal length and discount.
    pub fn concat(mut self, other: &Self) -> Result<Self> {
        if self.len != other.len || self.pow != other.pow {
            return Err(Error::InvalidInput("batch shapes differ".into()));
        }
        self.batch += other.batch;
        self.states.extend_from_slice(&other.states);
        self.actions.extend_from_slice(&other.actions);
        self.rewards.extend_from_slice(&other.rewards);
        self.valid_len.extend_from_slice(&other.valid_len);
        self.terminal_end.extend_from_slice(&other.terminal_end);
        self.episode_ids.extend_from_slice(&other.episode_ids);
        self.prefix.extend_from_slice(&other.prefix);
        self.suffix.extend_from_slice(&other.suffix);
        Ok(self)
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Nominal trajectory length `L`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.batch == 0
    }

    pub fn valid_len(&self, row: usize) -> usize {
        self.valid_len[row]
    }

    pub fn state(&self, row: usize, k: usize) -> usize {
        self.states[row * (self.len + 1) + k]
    }

    pub fn action(&self, row: usize, k: usize) -> usize {
        self.actions[row * self.len + k]
    }

    pub fn reward(&self, row: usize, k: usize) -> T {
        self.rewards[row * self.len + k]
    }

    pub fn rewards(&self, row: usize) -> &[T] {
        &self.rewards[row * self.len..][..self.valid_len[row]]
    }

    pub fn prefix(&self, row: usize) -> &[T] {
        &self.prefix[row * (self.len + 1)..][..self.len + 1]
    }

    pub fn episode_id(&self, row: usize) -> u64 {
        self.episode_ids[row]
    }

    /// The row ends by entering a terminal state.
    pub fn terminal_end(&self, row: usize) -> bool {
        self.terminal_end[row]
    }

    /// `s_k` of this row is terminal (only possible at `k = valid_len`).
    pub fn is_terminal(&self, row: usize, k: usize) -> bool {
        k == self.valid_len[row] && self.terminal_end[row]
    }

    pub fn powers(&self) -> &GammaPowers<T> {
        &self.pow
    }

    /// `G_{i:j}` without bounds checks.
    ///
    /// Evaluated from reward-to-go sums, `S_i - γ^{j-i} S_j`, so the result
    /// never divides by `γ^i` and stays accurate for small γ and long rows.
    #[inline]
    pub(crate) fn g(&self, row: usize, i: usize, j: usize) -> T {
        let s = &self.suffix[row * (self.len + 1)..];
        s[i] - self.pow.get(j - i) * s[j]
    }

    /// `G_{i:j} = Σ_{u=i}^{j-1} γ^{u-i} r_u` for `0 ≤ i ≤ j ≤ valid_len`.
    pub fn partial_return(&self, row: usize, i: usize, j: usize) -> Result<T> {
        if row >= self.batch || i > j || j > self.valid_len[row] {
            return Err(Error::InvalidIndices(format!(
                "G_{{{i}:{j}}} on row {row} with valid length {}",
                self.valid_len.get(row).copied().unwrap_or(0)
            )));
        }
        Ok(self.g(row, i, j))
    }
}

/// FIFO replay over whole episodes.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T: Scalar> {
    capacity: usize,
    gamma: T,
    items: VecDeque<Transition<T>>,
}

impl<T: Scalar> ReplayBuffer<T> {
    pub fn new(capacity: usize, gamma: T) -> Self {
        Self {
            capacity: capacity.max(1),
            gamma,
            items: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, idx: usize) -> Option<&Transition<T>> {
        self.items.get(idx)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<T>> {
        self.items.iter()
    }

    /// Appends one episode (or the continuation of the newest one), then
    /// evicts the oldest whole episodes until the buffer fits.
    pub fn push_episode(&mut self, transitions: &[Transition<T>]) -> Result<()> {
        let Some(first) = transitions.first() else {
            return Ok(());
        };
        for w in transitions.windows(2) {
            if w[1].episode_id != w[0].episode_id || w[1].step_index != w[0].step_index + 1 || w[0].done {
                return Err(Error::InvalidEpisode(format!(
                    "step {} of episode {} does not follow step {} of episode {}",
                    w[1].step_index, w[1].episode_id, w[0].step_index, w[0].episode_id
                )));
            }
        }
        let continues = self
            .items
            .back()
            .is_some_and(|b| b.episode_id == first.episode_id);
        if continues {
            let b = self.items.back().unwrap();
            if b.done || first.step_index != b.step_index + 1 {
                return Err(Error::InvalidEpisode(format!(
                    "episode {} resumes at step {} after step {}",
                    first.episode_id, first.step_index, b.step_index
                )));
            }
        } else if first.step_index != 0 {
            return Err(Error::InvalidEpisode(format!(
                "episode {} starts at step {}",
                first.episode_id, first.step_index
            )));
        }
        self.items.extend(transitions.iter().copied());
        self.evict();
        Ok(())
    }

    /// Splits a flat dataset on episode-id changes and pushes each episode.
    pub fn push_dataset(&mut self, data: &[Transition<T>]) -> Result<()> {
        let mut start = 0;
        for i in 1..=data.len() {
            if i == data.len() || data[i].episode_id != data[i - 1].episode_id {
                self.push_episode(&data[start..i])?;
                start = i;
            }
        }
        Ok(())
    }

    fn evict(&mut self) {
        while self.items.len() > self.capacity {
            let oldest = self.items.front().unwrap().episode_id;
            let newest = self.items.back().unwrap().episode_id;
            if oldest == newest {
                // A single episode longer than the buffer: drop its head.
                self.items.pop_front();
                continue;
            }
            while self.items.front().is_some_and(|t| t.episode_id == oldest) {
                self.items.pop_front();
            }
        }
    }

    /// Samples `num_trajs` start indices uniformly over stored transitions
    /// and unrolls up to `len` steps from each.
    pub fn sample_trajectories<R: Rng + ?Sized>(
        &self,
        num_trajs: usize,
        len: usize,
        rng: &mut R,
    ) -> Result<TrajectoryBatch<T>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let starts: Vec<usize> = (0..num_trajs).map(|_| rng.gen_range(0..self.items.len())).collect();
        self.trajectories_at(&starts, len)
    }

    /// Unrolls rows from explicit start indices.
    pub fn trajectories_at(&self, starts: &[usize], len: usize) -> Result<TrajectoryBatch<T>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if len == 0 {
            return Err(Error::InvalidInput("trajectory length must be at least 1".into()));
        }
        let mut out = TrajectoryBatch::empty(self.gamma, len);
        let mut states = Vec::with_capacity(len + 1);
        let mut actions = Vec::with_capacity(len);
        let mut rewards = Vec::with_capacity(len);
        for &start in starts {
            if start >= self.items.len() {
                return Err(Error::InvalidIndex(format!("start {start} beyond buffer size {}", self.items.len())));
            }
            states.clear();
            actions.clear();
            rewards.clear();
            let head = self.items[start];
            let mut last = head;
            for j in 0..len {
                let Some(t) = self.items.get(start + j) else { break };
                if j > 0 && (t.episode_id != last.episode_id || t.step_index != last.step_index + 1) {
                    break;
                }
                states.push(t.s);
                actions.push(t.a);
                rewards.push(t.r);
                last = *t;
                if t.done {
                    break;
                }
            }
            states.push(last.s_next);
            out.push_row(&states, &actions, &rewards, last.done, head.episode_id);
        }
        Ok(out)
    }

    pub fn from_csv<R: std::io::Read>(r: R, capacity: usize, gamma: T) -> Result<Self> {
        let data = crate::mdp::read_dataset_csv(r)?;
        let mut buf = Self::new(capacity, gamma);
        buf.push_dataset(&data)?;
        Ok(buf)
    }
}
