//! Messages and the append-only lexicon.
//!
//! Ids 0..=5 are `V1..V6`, ids 6..=11 are `H1..H6`. Every later id is an
//! abstraction over strictly earlier ids, so expansion always terminates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BlockAction, Orientation, GRID_SIZE};

pub const PRIMITIVE_COUNT: usize = 2 * GRID_SIZE;
pub const DEFAULT_CAPACITY: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexiconError {
    #[error("message {0} is not active")]
    InactiveMessage(MessageId),
    #[error("lexicon is full ({0} messages)")]
    Full(usize),
    #[error("abstraction needs at least one part")]
    EmptyAbstraction,
    #[error("capacity {0} is below the {PRIMITIVE_COUNT} primitives")]
    CapacityTooSmall(usize),
    #[error("cannot parse message name {0:?}")]
    BadName(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MessageId(pub usize);

impl MessageId {
    pub fn vertical(position: usize) -> Self {
        debug_assert!((1..=GRID_SIZE).contains(&position));
        MessageId(position - 1)
    }

    pub fn horizontal(position: usize) -> Self {
        debug_assert!((1..=GRID_SIZE).contains(&position));
        MessageId(GRID_SIZE + position - 1)
    }

    pub fn for_action(action: BlockAction) -> Self {
        match action.orientation {
            Orientation::Vertical => Self::vertical(action.position),
            Orientation::Horizontal => Self::horizontal(action.position),
        }
    }

    pub fn is_primitive(self) -> bool {
        self.0 < PRIMITIVE_COUNT
    }

    /// The block placement of a primitive id.
    pub fn primitive_action(self) -> Option<BlockAction> {
        match self.0 {
            i if i < GRID_SIZE => Some(BlockAction::vertical(i + 1)),
            i if i < PRIMITIVE_COUNT => Some(BlockAction::horizontal(i - GRID_SIZE + 1)),
            _ => None,
        }
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.primitive_action() {
            Some(a) => write!(f, "{a}"),
            None => write!(f, "A{}", self.0),
        }
    }
}

impl fmt::Debug for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for MessageId {
    type Err = LexiconError;

    /// Accepts `V3`, `H1`, `A12` or a bare numeric id.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || LexiconError::BadName(s.to_string());
        let s = s.trim();
        if let Ok(n) = s.parse::<usize>() {
            return Ok(MessageId(n));
        }
        let (head, tail) = s.split_at(s.char_indices().nth(1).map_or(s.len(), |(i, _)| i));
        let n: usize = tail.parse().map_err(|_| bad())?;
        match head {
            "V" | "v" if (1..=GRID_SIZE).contains(&n) => Ok(MessageId::vertical(n)),
            "H" | "h" if (1..=GRID_SIZE).contains(&n) => Ok(MessageId::horizontal(n)),
            "A" | "a" if n >= PRIMITIVE_COUNT => Ok(MessageId(n)),
            _ => Err(bad()),
        }
    }
}

/// Renders `[V1,V2,H1]`.
pub fn format_sequence(seq: &[MessageId]) -> String {
    let parts: Vec<String> = seq.iter().map(ToString::to_string).collect();
    format!("[{}]", parts.join(","))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Primitive(BlockAction),
    Abstraction(Vec<MessageId>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    capacity: usize,
    messages: Vec<Message>,
    expansions: Vec<Vec<BlockAction>>,
}

impl Lexicon {
    /// Primitives only. Panics if `capacity` is below the primitive count;
    /// use [`Lexicon::try_new`] for checked construction.
    pub fn new(capacity: usize) -> Self {
        Self::try_new(capacity).expect("lexicon capacity")
    }

    pub fn try_new(capacity: usize) -> Result<Self, LexiconError> {
        if capacity < PRIMITIVE_COUNT {
            return Err(LexiconError::CapacityTooSmall(capacity));
        }
        let messages: Vec<Message> =
            (0..PRIMITIVE_COUNT).map(|i| Message::Primitive(MessageId(i).primitive_action().unwrap())).collect();
        let expansions = messages
            .iter()
            .map(|m| match m {
                Message::Primitive(a) => vec![*a],
                Message::Abstraction(_) => unreachable!(),
            })
            .collect();
        Ok(Lexicon { capacity, messages, expansions })
    }

    /// Maximum number of messages (the network's output width).
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity
    }

    pub fn is_active(&self, id: MessageId) -> bool {
        id.0 < self.messages.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = MessageId> {
        (0..self.messages.len()).map(MessageId)
    }

    pub fn message(&self, id: MessageId) -> Result<&Message, LexiconError> {
        self.messages.get(id.0).ok_or(LexiconError::InactiveMessage(id))
    }

    /// Abstractions in id order.
    pub fn abstractions(&self) -> impl Iterator<Item = (MessageId, &[MessageId])> {
        self.messages.iter().enumerate().filter_map(|(i, m)| match m {
            Message::Abstraction(parts) => Some((MessageId(i), parts.as_slice())),
            Message::Primitive(_) => None,
        })
    }

    /// Id of an existing abstraction with exactly this definition.
    pub fn find_abstraction(&self, parts: &[MessageId]) -> Option<MessageId> {
        self.abstractions().find(|(_, p)| *p == parts).map(|(id, _)| id)
    }

    /// Appends an abstraction over already-active ids.
    pub fn push_abstraction(&mut self, parts: Vec<MessageId>) -> Result<MessageId, LexiconError> {
        if parts.is_empty() {
            return Err(LexiconError::EmptyAbstraction);
        }
        if self.is_full() {
            return Err(LexiconError::Full(self.capacity));
        }
        if let Some(&bad) = parts.iter().find(|p| !self.is_active(**p)) {
            return Err(LexiconError::InactiveMessage(bad));
        }
        let flat = parts.iter().flat_map(|p| self.expansions[p.0].iter().copied()).collect();
        let id = MessageId(self.messages.len());
        self.messages.push(Message::Abstraction(parts));
        self.expansions.push(flat);
        Ok(id)
    }

    /// Primitive actions of `id`, in execution order.
    pub fn expansion(&self, id: MessageId) -> Result<&[BlockAction], LexiconError> {
        self.expansions.get(id.0).map(Vec::as_slice).ok_or(LexiconError::InactiveMessage(id))
    }

    /// Recursive in-order expansion of `id` into primitive actions.
    pub fn expand(&self, id: MessageId) -> Result<Vec<BlockAction>, LexiconError> {
        let mut out = Vec::new();
        self.expand_into(id, &mut out)?;
        Ok(out)
    }

    fn expand_into(&self, id: MessageId, out: &mut Vec<BlockAction>) -> Result<(), LexiconError> {
        match self.message(id)? {
            Message::Primitive(a) => out.push(*a),
            Message::Abstraction(parts) => {
                for &p in parts {
                    self.expand_into(p, out)?;
                }
            }
        }
        Ok(())
    }

    /// Expands a whole message sequence into primitives.
    pub fn expand_all(&self, seq: &[MessageId]) -> Result<Vec<BlockAction>, LexiconError> {
        let mut out = Vec::new();
        for &id in seq {
            out.extend_from_slice(self.expansion(id)?);
        }
        Ok(out)
    }

    pub fn to_record(&self) -> LexiconRecord {
        LexiconRecord { capacity: self.capacity, abstractions: self.abstractions().map(|(_, p)| p.to_vec()).collect() }
    }

    pub fn from_record(record: &LexiconRecord) -> Result<Self, LexiconError> {
        let mut lex = Lexicon::try_new(record.capacity)?;
        for parts in &record.abstractions {
            let next = MessageId(lex.len());
            if parts.iter().any(|p| *p >= next) {
                return Err(LexiconError::InactiveMessage(*parts.iter().max().unwrap()));
            }
            lex.push_abstraction(parts.clone())?;
        }
        Ok(lex)
    }

    /// One line per abstraction, e.g. `A12=[V1,V2,H1]`.
    pub fn describe(&self) -> Vec<String> {
        self.abstractions().map(|(id, p)| format!("{id}={}", format_sequence(p))).collect()
    }
}

/// Serialized form: the primitives are implicit, abstractions in id order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconRecord {
    pub capacity: usize,
    pub abstractions: Vec<Vec<MessageId>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn primitive_ids_layout() {
        assert_eq!(MessageId::vertical(1).0, 0);
        assert_eq!(MessageId::vertical(6).0, 5);
        assert_eq!(MessageId::horizontal(1).0, 6);
        assert_eq!(MessageId::horizontal(6).0, 11);
        assert_eq!(MessageId(3).to_string(), "V4");
        assert_eq!(MessageId(12).to_string(), "A12");
        assert_eq!("H2".parse::<MessageId>().unwrap(), MessageId(7));
        assert_eq!("A13".parse::<MessageId>().unwrap(), MessageId(13));
        assert!("A3".parse::<MessageId>().is_err());
        assert!("V7".parse::<MessageId>().is_err());
    }

    #[test]
    fn expand_primitive() {
        let lex = Lexicon::new(20);
        assert_eq!(lex.expand(MessageId::vertical(3)).unwrap(), vec![BlockAction::vertical(3)]);
    }

    #[test]
    fn expand_one_level() {
        let mut lex = Lexicon::new(20);
        let a = lex
            .push_abstraction(vec![MessageId::vertical(1), MessageId::vertical(2), MessageId::horizontal(1)])
            .unwrap();
        assert_eq!(
            lex.expand(a).unwrap(),
            vec![BlockAction::vertical(1), BlockAction::vertical(2), BlockAction::horizontal(1)]
        );
    }

    #[test]
    fn expand_nested() {
        let mut lex = Lexicon::new(20);
        let a12 = lex.push_abstraction(vec![MessageId::vertical(1), MessageId::vertical(2)]).unwrap();
        let a13 = lex.push_abstraction(vec![a12, MessageId::horizontal(1)]).unwrap();
        assert_eq!((a12.0, a13.0), (12, 13));
        let want = vec![BlockAction::vertical(1), BlockAction::vertical(2), BlockAction::horizontal(1)];
        assert_eq!(lex.expand(a13).unwrap(), want);
        assert_eq!(lex.expansion(a13).unwrap(), want.as_slice());
    }

    #[test]
    fn inactive_and_full() {
        let mut lex = Lexicon::new(13);
        assert_eq!(lex.expand(MessageId(12)), Err(LexiconError::InactiveMessage(MessageId(12))));
        lex.push_abstraction(vec![MessageId(0), MessageId(1)]).unwrap();
        assert_eq!(lex.push_abstraction(vec![MessageId(0)]), Err(LexiconError::Full(13)));
        assert!(Lexicon::try_new(11).is_err());
    }

    #[test]
    fn record_round_trip() {
        let mut lex = Lexicon::new(20);
        let a = lex.push_abstraction(vec![MessageId(0), MessageId(1)]).unwrap();
        lex.push_abstraction(vec![a, MessageId(6)]).unwrap();
        let json = serde_json::to_string(&lex.to_record()).unwrap();
        let back: LexiconRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(Lexicon::from_record(&back).unwrap(), lex);
    }

    #[test]
    fn forward_reference_in_record_rejected() {
        let rec = LexiconRecord { capacity: 20, abstractions: vec![vec![MessageId(12)]] };
        assert!(Lexicon::from_record(&rec).is_err());
    }

    proptest! {
        // Randomly grown lexicons: every id expands, the cached flat
        // expansion equals the recursive one, and growth never changes
        // earlier meanings.
        #[test]
        fn grown_lexicons_expand(picks in prop::collection::vec(prop::collection::vec(0usize..1000, 1..5), 0..8)) {
            let mut lex = Lexicon::new(20);
            let mut before: Vec<Vec<BlockAction>> = Vec::new();
            for parts in picks {
                before = lex.ids().map(|id| lex.expand(id).unwrap()).collect();
                let n = lex.len();
                let parts: Vec<MessageId> = parts.into_iter().map(|p| MessageId(p % n)).collect();
                lex.push_abstraction(parts).unwrap();
            }
            for id in lex.ids() {
                let rec = lex.expand(id).unwrap();
                prop_assert_eq!(rec.as_slice(), lex.expansion(id).unwrap());
            }
            for (i, old) in before.iter().enumerate() {
                prop_assert_eq!(&lex.expand(MessageId(i)).unwrap(), old);
            }
        }
    }
}
