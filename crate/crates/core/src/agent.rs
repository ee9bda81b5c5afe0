//! The architect: epsilon-greedy DQN over the lexicon with experience replay.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{legal_messages, BuildEnv, EnvError, Grid};
use crate::lexicon::{Lexicon, MessageId};
use crate::nn::{encode_batch, encode_input, Optimizer, QNetwork, INPUT_DIM};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("no legal message in the current state")]
    NoLegalMessage,
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    BufferTooSmall { have: usize, need: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub type EpisodeId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Transition<T> {
    pub goal: Grid,
    pub state: Grid,
    pub message: MessageId,
    pub reward: T,
    pub next_state: Grid,
    pub terminal: bool,
    /// Message index within the episode, 0-based.
    pub t: usize,
    pub episode_id: EpisodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeOrigin {
    Pretrain,
    Wake,
    Dream,
}

/// Contiguous run of one episode's transitions inside the buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpan {
    pub id: EpisodeId,
    /// Global sequence number of the first transition.
    pub start: u64,
    pub len: usize,
    pub success: bool,
    pub origin: EpisodeOrigin,
    pub complete: bool,
}

/// Ring buffer of transitions plus an index of whole episodes. Episodes
/// whose head has been evicted drop out of the index.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<Transition<T>>,
    first_seq: u64,
    spans: VecDeque<EpisodeSpan>,
    next_episode: EpisodeId,
}

impl<T: Real> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            first_seq: 0,
            spans: VecDeque::new(),
            next_episode: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, index: usize) -> &Transition<T> {
        &self.items[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<T>> {
        self.items.iter()
    }

    /// Id the next episode will receive.
    pub fn next_episode_id(&self) -> EpisodeId {
        self.next_episode
    }

    pub fn begin_episode(&mut self, origin: EpisodeOrigin) -> EpisodeId {
        if let Some(last) = self.spans.back() {
            assert!(last.complete, "previous episode still open");
        }
        let id = self.next_episode;
        self.next_episode += 1;
        let start = self.first_seq + self.items.len() as u64;
        self.spans.push_back(EpisodeSpan { id, start, len: 0, success: false, origin, complete: false });
        id
    }

    pub fn push(&mut self, transition: Transition<T>) {
        let open = self.spans.back_mut().filter(|s| !s.complete).expect("push outside an episode");
        debug_assert_eq!(open.id, transition.episode_id);
        open.len += 1;
        if self.items.len() == self.capacity {
            self.items.pop_front();
            self.first_seq += 1;
            while self.spans.front().is_some_and(|s| s.start < self.first_seq) {
                self.spans.pop_front();
            }
        }
        self.items.push_back(transition);
    }

    pub fn finish_episode(&mut self, success: bool) {
        if let Some(span) = self.spans.back_mut().filter(|s| !s.complete) {
            span.success = success;
            span.complete = true;
        }
    }

    /// Stores a whole episode at once, under a fresh id.
    pub fn push_episode(&mut self, origin: EpisodeOrigin, transitions: Vec<Transition<T>>, success: bool) -> EpisodeId {
        let id = self.begin_episode(origin);
        for mut tr in transitions {
            tr.episode_id = id;
            self.push(tr);
        }
        self.finish_episode(success);
        id
    }

    /// Completed episodes still fully present, oldest first.
    pub fn episodes(&self) -> impl DoubleEndedIterator<Item = &EpisodeSpan> {
        self.spans.iter().filter(|s| s.complete)
    }

    pub fn episode_transitions(&self, span: &EpisodeSpan) -> impl Iterator<Item = &Transition<T>> {
        let offset = (span.start - self.first_seq) as usize;
        self.items.range(offset..offset + span.len)
    }

    pub fn episode_messages(&self, span: &EpisodeSpan) -> Vec<MessageId> {
        self.episode_transitions(span).map(|t| t.message).collect()
    }

    /// Uniform indices, with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        (0..n).map(|_| rng.gen_range(0..self.items.len())).collect()
    }
}

/// Highest-Q legal message, lowest id on ties. `None` when nothing is legal.
pub fn greedy_from_q<T: Real>(q: &[T], mask: &[bool]) -> Option<MessageId> {
    let mut best: Option<(usize, T)> = None;
    for (i, (&v, &ok)) in q.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| MessageId(i))
}

pub fn q_values<T: Real>(net: &QNetwork<T>, goal: Grid, state: Grid) -> Array1<T> {
    let mut x = Array1::zeros(INPUT_DIM);
    encode_input(goal, state, x.as_slice_mut().unwrap());
    net.forward(x.view())
}

pub fn greedy_message<T: Real>(net: &QNetwork<T>, goal: Grid, state: Grid, lexicon: &Lexicon) -> Option<MessageId> {
    let mask = legal_messages(state, goal, lexicon);
    if !mask.iter().any(|&m| m) {
        return None;
    }
    let q = q_values(net, goal, state);
    greedy_from_q(q.as_slice().unwrap(), &mask)
}

/// Epsilon-greedy choice among legal, active messages.
pub fn select_message<T: Real, R: Rng + ?Sized>(
    net: &QNetwork<T>,
    goal: Grid,
    state: Grid,
    lexicon: &Lexicon,
    epsilon: f64,
    rng: &mut R,
) -> Result<MessageId, AgentError> {
    let mask = legal_messages(state, goal, lexicon);
    let legal: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    if legal.is_empty() {
        return Err(AgentError::NoLegalMessage);
    }
    if rng.gen::<f64>() < epsilon {
        return Ok(MessageId(*legal.choose(rng).unwrap()));
    }
    let q = q_values(net, goal, state);
    Ok(greedy_from_q(q.as_slice().unwrap(), &mask).unwrap())
}

fn bootstrap<T: Real>(q_next: &[T], next_state: Grid, goal: Grid, lexicon: &Lexicon) -> T {
    let mask = legal_messages(next_state, goal, lexicon);
    greedy_from_q(q_next, &mask).map_or(T::zero(), |m| q_next[m.0])
}

/// `r` for terminal transitions, else `r + gamma * max_legal Q_target(s')`.
pub fn td_target<T: Real>(transition: &Transition<T>, target_net: &QNetwork<T>, lexicon: &Lexicon, gamma: T) -> T {
    if transition.terminal {
        return transition.reward;
    }
    let q = q_values(target_net, transition.goal, transition.next_state);
    transition.reward + gamma * bootstrap(q.as_slice().unwrap(), transition.next_state, transition.goal, lexicon)
}

/// One mini-batch regression of `Q(s)[m]` onto the TD targets. Only the
/// chosen message's output receives gradient. Returns the mean squared error.
#[allow(clippy::too_many_arguments)]
pub fn train_step<T: Real, R: Rng + ?Sized>(
    net: &mut QNetwork<T>,
    target_net: &QNetwork<T>,
    buffer: &ReplayBuffer<T>,
    optimizer: &mut Optimizer<T>,
    lexicon: &Lexicon,
    batch_size: usize,
    gamma: T,
    rng: &mut R,
) -> Result<T, AgentError> {
    if buffer.len() < batch_size || batch_size == 0 {
        return Err(AgentError::BufferTooSmall { have: buffer.len(), need: batch_size.max(1) });
    }
    let batch: Vec<&Transition<T>> =
        buffer.sample_indices(rng, batch_size).into_iter().map(|i| buffer.get(i)).collect();
    let targets = batch_targets(&batch, target_net, lexicon, gamma);

    let x = encode_batch::<T>(batch.iter().map(|t| (t.goal, t.state)));
    let trace = net.forward_trace(x.view());
    let n = T::from_usize(batch_size).unwrap();
    let two = T::lit(2.0);
    let mut out_grad = Array2::zeros(trace.output.dim());
    let mut loss = T::zero();
    for (i, (tr, &y)) in batch.iter().zip(&targets).enumerate() {
        let err = trace.output[[i, tr.message.0]] - y;
        loss += err * err;
        out_grad[[i, tr.message.0]] = two * err / n;
    }
    let grads = net.backward(&trace, out_grad.view());
    optimizer.apply(net, &grads);
    Ok(loss / n)
}

fn batch_targets<T: Real>(batch: &[&Transition<T>], target_net: &QNetwork<T>, lexicon: &Lexicon, gamma: T) -> Vec<T> {
    let open: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].terminal).collect();
    let mut targets: Vec<T> = batch.iter().map(|t| t.reward).collect();
    if open.is_empty() {
        return targets;
    }
    let x = encode_batch::<T>(open.iter().map(|&i| (batch[i].goal, batch[i].next_state)));
    let q = target_net.forward_batch(x.view());
    for (row, &i) in open.iter().enumerate() {
        let tr = batch[i];
        let qn = q.row(row);
        targets[i] += gamma * bootstrap(qn.as_slice().unwrap(), tr.next_state, tr.goal, lexicon);
    }
    targets
}

/// Deep copy used as the frozen bootstrap network.
pub fn sync_target<T: Real>(net: &QNetwork<T>) -> QNetwork<T> {
    net.clone()
}

/// Multiplicative decay per episode with a floor; raised on new messages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub value: f64,
    pub decay: f64,
    pub floor: f64,
    pub bump: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { value: 1.0, decay: 0.99995, floor: 0.05, bump: 0.3 }
    }
}

impl EpsilonSchedule {
    pub fn end_episode(&mut self) {
        self.value = (self.value * self.decay).max(self.floor);
    }

    pub fn on_new_message(&mut self) {
        self.value = self.value.max(self.bump);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub gamma: f64,
    pub batch_size: usize,
    /// Train steps between target-network syncs.
    pub target_sync: u64,
    /// Environment steps per train step.
    pub train_every: u64,
    pub replay_capacity: usize,
}

impl Default for AgentParams {
    fn default() -> Self {
        AgentParams { gamma: 1.0, batch_size: 64, target_sync: 500, train_every: 1, replay_capacity: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary<T> {
    pub episode_id: EpisodeId,
    pub success: bool,
    pub steps: usize,
    pub ret: T,
    pub messages: Vec<MessageId>,
    pub losses: Vec<T>,
    pub final_state: Grid,
}

impl<T: Real> EpisodeSummary<T> {
    pub fn mean_loss(&self) -> Option<f64> {
        if self.losses.is_empty() {
            return None;
        }
        let sum: f64 = self.losses.iter().map(|l| l.as_f64()).sum();
        Some(sum / self.losses.len() as f64)
    }
}

/// Online network, target network, optimizer and replay, trained in the
/// strict order act, store, train.
#[derive(Debug, Clone)]
pub struct DqnAgent<T> {
    pub net: QNetwork<T>,
    pub target: QNetwork<T>,
    pub optimizer: Optimizer<T>,
    pub buffer: ReplayBuffer<T>,
    pub params: AgentParams,
    pub env_steps: u64,
    pub train_steps: u64,
}

impl<T: Real> DqnAgent<T> {
    pub fn new(net: QNetwork<T>, optimizer: Optimizer<T>, params: AgentParams) -> Self {
        let target = sync_target(&net);
        DqnAgent {
            net,
            target,
            optimizer,
            buffer: ReplayBuffer::new(params.replay_capacity),
            params,
            env_steps: 0,
            train_steps: 0,
        }
    }

    pub fn sync_target(&mut self) {
        self.target = sync_target(&self.net);
    }

    /// One train step on `buffer` (the agent's own when `None`), with the
    /// periodic target sync.
    pub fn train_on<R: Rng + ?Sized>(
        &mut self,
        buffer: Option<&ReplayBuffer<T>>,
        lexicon: &Lexicon,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<T, AgentError> {
        let buffer = buffer.unwrap_or(&self.buffer);
        let loss = train_step(
            &mut self.net,
            &self.target,
            buffer,
            &mut self.optimizer,
            lexicon,
            batch_size,
            T::lit(self.params.gamma),
            rng,
        )?;
        self.train_steps += 1;
        if self.train_steps.is_multiple_of(self.params.target_sync) {
            self.sync_target();
        }
        Ok(loss)
    }

    fn after_env_step<R: Rng + ?Sized>(&mut self, lexicon: &Lexicon, rng: &mut R) -> Option<T> {
        self.env_steps += 1;
        if !self.env_steps.is_multiple_of(self.params.train_every) || self.buffer.len() < self.params.batch_size {
            return None;
        }
        let batch = self.params.batch_size;
        self.train_on(None, lexicon, batch, rng).ok()
    }

    /// Rolls out one episode from the empty grid, storing every transition.
    /// With `learn`, trains after each environment step.
    #[allow(clippy::too_many_arguments)]
    pub fn run_episode<R: Rng + ?Sized>(
        &mut self,
        env: &BuildEnv,
        goal: Grid,
        lexicon: &Lexicon,
        epsilon: f64,
        rng: &mut R,
        origin: EpisodeOrigin,
        learn: bool,
    ) -> Result<EpisodeSummary<T>, AgentError> {
        let episode_id = self.buffer.begin_episode(origin);
        let mut state = Grid::EMPTY;
        let mut ret = T::zero();
        let mut messages = Vec::new();
        let mut losses = Vec::new();
        let mut success = false;
        for t in 0..env.max_steps {
            let message = match select_message(&self.net, goal, state, lexicon, epsilon, rng) {
                Ok(m) => m,
                Err(AgentError::NoLegalMessage) => break,
                Err(e) => return Err(e),
            };
            let step = env.step::<T>(state, goal, message, lexicon, t)?;
            self.buffer.push(Transition {
                goal,
                state,
                message,
                reward: step.reward,
                next_state: step.next_state,
                terminal: step.terminal,
                t,
                episode_id,
            });
            ret += step.reward;
            messages.push(message);
            state = step.next_state;
            if learn {
                losses.extend(self.after_env_step(lexicon, rng));
            }
            if step.terminal {
                success = state == goal;
                break;
            }
        }
        self.buffer.finish_episode(success);
        Ok(EpisodeSummary { episode_id, success, steps: messages.len(), ret, messages, losses, final_state: state })
    }
}

/// Greedy rollout from the empty grid; touches no buffer.
pub fn greedy_rollout<T: Real>(
    net: &QNetwork<T>,
    env: &BuildEnv,
    goal: Grid,
    lexicon: &Lexicon,
) -> (bool, Vec<MessageId>) {
    let mut state = Grid::EMPTY;
    let mut messages = Vec::new();
    for t in 0..env.max_steps {
        let Some(m) = greedy_message(net, goal, state, lexicon) else { break };
        let Ok(step) = env.step::<T>(state, goal, m, lexicon, t) else { break };
        messages.push(m);
        state = step.next_state;
        if step.terminal {
            break;
        }
    }
    (state == goal, messages)
}
