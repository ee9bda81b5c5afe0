//! Sleep phase: find frequent contiguous message runs in recent successful
//! episodes and promote the best one into the lexicon.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;

use crate::agent::{EpisodeOrigin, ReplayBuffer};
use crate::lexicon::{format_sequence, Lexicon, MessageId};
use crate::scalar::Real;

pub use crate::lexicon::LexiconError;

pub const DEFAULT_MIN_LEN: usize = 2;
pub const DEFAULT_MAX_LEN: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateAbstraction {
    pub sequence: Vec<MessageId>,
    /// Episodes containing the sequence at least once.
    pub frequency: usize,
    pub score: f64,
}

impl CandidateAbstraction {
    pub fn new(sequence: Vec<MessageId>, frequency: usize) -> Self {
        let score = score(frequency, sequence.len());
        CandidateAbstraction { sequence, frequency, score }
    }
}

impl fmt::Display for CandidateAbstraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} freq={} score={}", format_sequence(&self.sequence), self.frequency, self.score)
    }
}

/// Frequency times the number of messages saved per use.
pub fn score(frequency: usize, length: usize) -> f64 {
    (frequency * length.saturating_sub(1)) as f64
}

/// Score desc, then length desc, then lexicographic ids asc.
pub fn rank_order(a: &CandidateAbstraction, b: &CandidateAbstraction) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.sequence.len().cmp(&a.sequence.len()))
        .then_with(|| a.sequence.cmp(&b.sequence))
}

/// Message sequences of the latest `window` successful wake episodes,
/// oldest first.
pub fn collect_sequences<T: Real>(buffer: &ReplayBuffer<T>, window: usize) -> Vec<Vec<MessageId>> {
    let mut seqs: Vec<Vec<MessageId>> = buffer
        .episodes()
        .rev()
        .filter(|s| s.success && s.origin == EpisodeOrigin::Wake)
        .take(window)
        .map(|s| buffer.episode_messages(s))
        .collect();
    seqs.reverse();
    seqs
}

/// Every contiguous run with length in `[min_len, max_len]`, counted once
/// per sequence, ranked by [`rank_order`].
pub fn mine(sequences: &[Vec<MessageId>], min_len: usize, max_len: usize) -> Vec<CandidateAbstraction> {
    let min_len = min_len.max(1);
    let mut counts: HashMap<&[MessageId], usize> = HashMap::new();
    let mut seen: HashSet<&[MessageId]> = HashSet::new();
    for seq in sequences {
        seen.clear();
        for len in min_len..=max_len.min(seq.len()) {
            for window in seq.windows(len) {
                if seen.insert(window) {
                    *counts.entry(window).or_insert(0) += 1;
                }
            }
        }
    }
    let mut ranked: Vec<CandidateAbstraction> =
        counts.into_iter().map(|(s, f)| CandidateAbstraction::new(s.to_vec(), f)).collect();
    ranked.sort_by(rank_order);
    ranked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoPromotion {
    BelowThreshold,
    LexiconFull,
    Duplicate,
}

impl fmt::Display for NoPromotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoPromotion::BelowThreshold => "below threshold",
            NoPromotion::LexiconFull => "lexicon full",
            NoPromotion::Duplicate => "duplicate",
        })
    }
}

/// Appends `candidate` as a new abstraction when it clears the threshold,
/// a slot is free and no abstraction already has this definition.
pub fn promote(
    lexicon: &mut Lexicon,
    candidate: &CandidateAbstraction,
    score_threshold: f64,
) -> Result<MessageId, NoPromotion> {
    if candidate.score < score_threshold {
        return Err(NoPromotion::BelowThreshold);
    }
    if lexicon.is_full() {
        return Err(NoPromotion::LexiconFull);
    }
    if lexicon.find_abstraction(&candidate.sequence).is_some() {
        return Err(NoPromotion::Duplicate);
    }
    lexicon.push_abstraction(candidate.sequence.clone()).map_err(|_| NoPromotion::LexiconFull)
}

/// Walks the ranking and promotes the first candidate that is not a
/// duplicate. Stops at the first candidate below the threshold.
pub fn promote_best(
    lexicon: &mut Lexicon,
    ranking: &[CandidateAbstraction],
    score_threshold: f64,
) -> Result<(MessageId, CandidateAbstraction), NoPromotion> {
    let mut last = NoPromotion::BelowThreshold;
    for cand in ranking {
        match promote(lexicon, cand, score_threshold) {
            Ok(id) => return Ok((id, cand.clone())),
            Err(NoPromotion::Duplicate) => last = NoPromotion::Duplicate,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Episode log lines (`episode_id,step,message_id`) grouped into
/// sequences ordered by episode id then step.
pub fn sequences_from_log(rows: &[(u64, usize, MessageId)]) -> Vec<Vec<MessageId>> {
    let mut by_episode: std::collections::BTreeMap<u64, Vec<(usize, MessageId)>> = Default::default();
    for &(ep, step, m) in rows {
        by_episode.entry(ep).or_default().push((step, m));
    }
    by_episode
        .into_values()
        .map(|mut steps| {
            steps.sort_by_key(|&(s, _)| s);
            steps.into_iter().map(|(_, m)| m).collect()
        })
        .collect()
}
