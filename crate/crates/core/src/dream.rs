//! Dream phase: replay recent episodes rewritten to use a new abstraction,
//! then fit the network on the shortened experience.

use rand::Rng;

use crate::agent::{AgentError, DqnAgent, EpisodeId, EpisodeOrigin, ReplayBuffer, Transition};
use crate::grid::{BuildEnv, EnvError, Grid};
use crate::lexicon::{Lexicon, LexiconError, MessageId};
use crate::scalar::Real;

/// Leftmost, non-overlapping replacement of the abstraction's definition by
/// its id, repeated until nothing changes.
pub fn rewrite_episode(
    sequence: &[MessageId],
    abstraction: MessageId,
    lexicon: &Lexicon,
) -> Result<Vec<MessageId>, LexiconError> {
    let pattern = match lexicon.message(abstraction)? {
        crate::lexicon::Message::Abstraction(parts) => parts.clone(),
        crate::lexicon::Message::Primitive(_) => return Ok(sequence.to_vec()),
    };
    let mut current = sequence.to_vec();
    loop {
        let next = replace_once(&current, &pattern, abstraction);
        if next == current {
            return Ok(current);
        }
        current = next;
    }
}

fn replace_once(seq: &[MessageId], pattern: &[MessageId], id: MessageId) -> Vec<MessageId> {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if !pattern.is_empty() && seq[i..].starts_with(pattern) {
            out.push(id);
            i += pattern.len();
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    out
}

/// Re-executes `messages` from the empty grid with fresh time indices.
pub fn replay_with_rewrite<T: Real>(
    goal: Grid,
    messages: &[MessageId],
    lexicon: &Lexicon,
    env: &BuildEnv,
) -> Result<Vec<Transition<T>>, EnvError> {
    let mut state = Grid::EMPTY;
    let mut out = Vec::with_capacity(messages.len());
    for (t, &message) in messages.iter().enumerate() {
        let step = env.step::<T>(state, goal, message, lexicon, t)?;
        out.push(Transition {
            goal,
            state,
            message,
            reward: step.reward,
            next_state: step.next_state,
            terminal: step.terminal,
            t,
            episode_id: 0,
        });
        state = step.next_state;
        if step.terminal {
            break;
        }
    }
    Ok(out)
}

/// A rewritten episode ready to be replayed into the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct DreamEpisode<T> {
    pub original: EpisodeId,
    pub transitions: Vec<Transition<T>>,
    pub success: bool,
}

/// Rewrites every completed wake episode with id `>= since` that contains
/// the abstraction's definition.
pub fn rewrite_buffer<T: Real>(
    buffer: &ReplayBuffer<T>,
    since: EpisodeId,
    abstraction: MessageId,
    lexicon: &Lexicon,
    env: &BuildEnv,
) -> Result<Vec<DreamEpisode<T>>, EnvError> {
    let mut out = Vec::new();
    for span in buffer.episodes().filter(|s| s.id >= since && s.origin == EpisodeOrigin::Wake) {
        let Some(first) = buffer.episode_transitions(span).next() else { continue };
        let goal = first.goal;
        let messages = buffer.episode_messages(span);
        let rewritten = rewrite_episode(&messages, abstraction, lexicon)?;
        if rewritten.len() == messages.len() {
            continue;
        }
        let transitions = replay_with_rewrite(goal, &rewritten, lexicon, env)?;
        let success = transitions.last().is_some_and(|t| t.next_state == goal);
        out.push(DreamEpisode { original: span.id, transitions, success });
    }
    Ok(out)
}

/// Trains `iterations` mini-batches drawn only from the dream transitions,
/// then merges them into the agent's replay buffer. Returns the loss trace.
pub fn dream_train<T: Real, R: Rng + ?Sized>(
    agent: &mut DqnAgent<T>,
    episodes: Vec<DreamEpisode<T>>,
    lexicon: &Lexicon,
    iterations: usize,
    rng: &mut R,
) -> Result<Vec<T>, AgentError> {
    let total: usize = episodes.iter().map(|e| e.transitions.len()).sum();
    if total == 0 {
        return Ok(Vec::new());
    }
    let mut dream_buf = ReplayBuffer::new(total);
    for ep in &episodes {
        dream_buf.push_episode(EpisodeOrigin::Dream, ep.transitions.clone(), ep.success);
    }
    let batch = agent.params.batch_size.min(total);
    let mut losses = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        losses.push(agent.train_on(Some(&dream_buf), lexicon, batch, rng)?);
    }
    for ep in episodes {
        agent.buffer.push_episode(EpisodeOrigin::Dream, ep.transitions, ep.success);
    }
    Ok(losses)
}

/// Sum of stored rewards.
pub fn episode_return<T: Real>(transitions: &[Transition<T>]) -> T {
    transitions.iter().map(|t| t.reward).sum()
}
