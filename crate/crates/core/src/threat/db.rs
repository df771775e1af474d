use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::TxHash;
use crate::encoding::{put_bytes, put_varint, sha256d};

pub type SeqId = u64;

/// Default cap on the length of a stored sequence.
pub const DEFAULT_MAX_SEQUENCE_LEN: usize = 64;
/// Default number of sequences kept before pruning.
pub const DEFAULT_CAPACITY: usize = 1024;

/// An ordered list of transaction hashes that together make up one attack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackSequence {
    pub id: SeqId,
    pub hashes: Vec<TxHash>,
    pub label: String,
    pub first_seen: u64,
}

impl AttackSequence {
    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }
}

/// A sequence proposed for insertion; it receives an id only once a
/// database accepts it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub hashes: Vec<TxHash>,
    pub label: String,
    pub first_seen: u64,
    /// Id of a stored sequence this candidate equals or is a prefix of.
    pub recurrence_of: Option<SeqId>,
}

impl Candidate {
    pub fn new(hashes: Vec<TxHash>, label: impl Into<String>, first_seen: u64) -> Self {
        Self {
            hashes,
            label: label.into(),
            first_seen,
            recurrence_of: None,
        }
    }

    /// Identity used for gossip duplicate suppression: the hash sequence
    /// alone, so the same attack reported by two nodes collapses.
    pub fn digest(&self) -> [u8; 32] {
        let mut buf = Vec::with_capacity(self.hashes.len() * 32);
        for h in &self.hashes {
            buf.extend_from_slice(h.as_bytes());
        }
        sha256d(&buf)
    }

    /// `varint ℓ, ℓ×32B, varint label-len, label, u64 first_seen`.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        put_varint(out, self.hashes.len() as u64);
        for h in &self.hashes {
            out.extend_from_slice(h.as_bytes());
        }
        put_bytes(out, self.label.as_bytes());
        out.extend_from_slice(&self.first_seen.to_le_bytes());
    }

    pub fn encoded_len(&self) -> usize {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out.len()
    }
}

/// Prefix length θ at which a sequence counts as detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum ThresholdRule {
    /// θ = ℓ: only the complete sequence triggers.
    Full,
    /// θ = min(ℓ, max(1, ⌈ℓ/3⌉) + 1): stop the attack after a short prefix.
    #[default]
    Early,
    /// θ = min(ℓ, max(1, n)).
    AtMost(usize),
}

impl ThresholdRule {
    pub fn theta(self, len: usize) -> usize {
        match self {
            ThresholdRule::Full => len,
            ThresholdRule::Early => len.min(len.div_ceil(3).max(1) + 1),
            ThresholdRule::AtMost(n) => len.min(n.max(1)),
        }
    }
}

/// Local security policy deciding what enters the threat database.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThreatPolicy {
    pub min_length: usize,
    /// Longer candidates are truncated to their first `max_length` hashes.
    pub max_length: usize,
    /// When set, only labels starting with one of these prefixes are kept.
    pub label_prefixes: Option<Vec<String>>,
    /// Store candidates that are a strict prefix of a known sequence.
    pub keep_recurrent_prefixes: bool,
    pub threshold: ThresholdRule,
}

impl Default for ThreatPolicy {
    fn default() -> Self {
        Self {
            min_length: 1,
            max_length: DEFAULT_MAX_SEQUENCE_LEN,
            label_prefixes: None,
            keep_recurrent_prefixes: false,
            threshold: ThresholdRule::Early,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("candidate length {len} below policy minimum {min}")]
    TooShort { len: usize, min: usize },
    #[error("label {0:?} not allowed by policy")]
    LabelNotAllowed(String),
    #[error("identical to stored sequence {0}")]
    Duplicate(SeqId),
    #[error("prefix of stored sequence {0}")]
    KnownPrefix(SeqId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Insertion {
    pub id: SeqId,
    pub evicted: Vec<SeqId>,
}

/// The k known attack sequences, with a hash index for the matcher.
#[derive(Debug, Clone)]
pub struct ThreatDatabase {
    sequences: Vec<AttackSequence>,
    capacity: usize,
    next_id: SeqId,
    last_matched: BTreeMap<SeqId, u64>,
    /// hash → (sequence id, 1-based position), ascending.
    index: HashMap<TxHash, Vec<(SeqId, usize)>>,
    generation: u64,
}

impl Default for ThreatDatabase {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

/// Equality covers the stored sequences; match history and capacity are
/// runtime state.
impl PartialEq for ThreatDatabase {
    fn eq(&self, other: &Self) -> bool {
        self.sequences == other.sequences
    }
}

impl Eq for ThreatDatabase {}

impl ThreatDatabase {
    pub fn new(capacity: usize) -> Self {
        Self {
            sequences: Vec::new(),
            capacity: capacity.max(1),
            next_id: 1,
            last_matched: BTreeMap::new(),
            index: HashMap::new(),
            generation: 0,
        }
    }

    /// k, the number of stored sequences.
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn sequences(&self) -> &[AttackSequence] {
        &self.sequences
    }

    pub fn get(&self, id: SeqId) -> Option<&AttackSequence> {
        self.sequences.iter().find(|s| s.id == id)
    }

    pub fn contains(&self, id: SeqId) -> bool {
        self.get(id).is_some()
    }

    /// Σ ℓᵢ over all stored sequences.
    pub fn total_length(&self) -> usize {
        self.sequences.iter().map(AttackSequence::len).sum()
    }

    /// Positions at which `h` occurs, as `(id, 1-based position)`.
    pub fn occurrences(&self, h: &TxHash) -> &[(SeqId, usize)] {
        self.index.get(h).map_or(&[], Vec::as_slice)
    }

    /// Bumped whenever a sequence is removed, so matcher state can drop
    /// entries for ids that no longer exist.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn last_matched(&self, id: SeqId) -> Option<u64> {
        self.last_matched.get(&id).copied()
    }

    pub fn record_match(&mut self, id: SeqId, now: u64) {
        if self.contains(id) {
            self.last_matched.insert(id, now);
        }
    }

    fn index_sequence(&mut self, seq_pos: usize) {
        let seq = &self.sequences[seq_pos];
        for (p, h) in seq.hashes.iter().enumerate() {
            let slot = self.index.entry(*h).or_default();
            slot.push((seq.id, p + 1));
            slot.sort_unstable();
        }
    }

    fn rebuild_index(&mut self) {
        self.index.clear();
        for i in 0..self.sequences.len() {
            self.index_sequence(i);
        }
    }

    /// Inserts without policy checks or pruning. Used by decoding and by
    /// explicit preloading.
    pub(crate) fn insert_raw(&mut self, seq: AttackSequence) {
        self.next_id = self.next_id.max(seq.id + 1);
        self.sequences.push(seq);
        self.index_sequence(self.sequences.len() - 1);
    }

    /// Stores a sequence directly, assigning the next id, then prunes.
    pub fn insert(&mut self, hashes: Vec<TxHash>, label: impl Into<String>, first_seen: u64) -> Insertion {
        assert!(!hashes.is_empty(), "attack sequences are non-empty");
        let id = self.next_id;
        self.insert_raw(AttackSequence {
            id,
            hashes,
            label: label.into(),
            first_seen,
        });
        let evicted = self.prune();
        Insertion { id, evicted }
    }

    /// Stored sequence equal to `hashes`, or failing that one that `hashes`
    /// is a strict prefix of. Lowest id wins.
    pub fn find_recurrence(&self, hashes: &[TxHash]) -> Option<(SeqId, bool)> {
        if hashes.is_empty() {
            return None;
        }
        if let Some(s) = self.sequences.iter().find(|s| s.hashes == hashes) {
            return Some((s.id, true));
        }
        self.sequences
            .iter()
            .find(|s| s.hashes.len() > hashes.len() && s.hashes.starts_with(hashes))
            .map(|s| (s.id, false))
    }

    /// Evicts sequences until `k <= capacity`. The victim is the least
    /// recently matched sequence (insertion counts as a match), ties broken
    /// by `first_seen` then id.
    pub fn prune(&mut self) -> Vec<SeqId> {
        let mut evicted = Vec::new();
        while self.sequences.len() > self.capacity {
            let victim = self
                .sequences
                .iter()
                .enumerate()
                .min_by_key(|(_, s)| {
                    let recency = self.last_matched.get(&s.id).copied().unwrap_or(s.first_seen);
                    (recency, s.first_seen, s.id)
                })
                .map(|(i, _)| i)
                .expect("non-empty when over capacity");
            let removed = self.sequences.remove(victim);
            self.last_matched.remove(&removed.id);
            evicted.push(removed.id);
        }
        if !evicted.is_empty() {
            self.generation += 1;
            self.rebuild_index();
        }
        evicted
    }

    pub fn set_capacity(&mut self, capacity: usize) -> Vec<SeqId> {
        self.capacity = capacity.max(1);
        self.prune()
    }
}

/// Applies `policy` to `candidate` and inserts it when accepted.
pub fn confirm_threat(
    db: &mut ThreatDatabase,
    candidate: &Candidate,
    policy: &ThreatPolicy,
) -> Result<Insertion, Rejection> {
    let len = candidate.hashes.len();
    if len < policy.min_length.max(1) {
        return Err(Rejection::TooShort {
            len,
            min: policy.min_length.max(1),
        });
    }
    if let Some(prefixes) = &policy.label_prefixes {
        if !prefixes.iter().any(|p| candidate.label.starts_with(p.as_str())) {
            return Err(Rejection::LabelNotAllowed(candidate.label.clone()));
        }
    }
    let hashes: Vec<TxHash> = candidate
        .hashes
        .iter()
        .take(policy.max_length.max(1))
        .copied()
        .collect();
    match db.find_recurrence(&hashes) {
        Some((id, true)) => return Err(Rejection::Duplicate(id)),
        Some((id, false)) if !policy.keep_recurrent_prefixes => return Err(Rejection::KnownPrefix(id)),
        _ => {}
    }
    Ok(db.insert(hashes, candidate.label.clone(), candidate.first_seen))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(b: u8) -> TxHash {
        TxHash([b; 32])
    }

    #[test]
    fn early_threshold_values() {
        let got: Vec<_> = (1..=9).map(|l| ThresholdRule::Early.theta(l)).collect();
        // ℓ=1→1, 2→2, 3→2, 4→3, 5→3, 6→3, 7→4, 8→4, 9→4
        assert_eq!(got, vec![1, 2, 2, 3, 3, 3, 4, 4, 4]);
        assert_eq!(ThresholdRule::Full.theta(5), 5);
        assert_eq!(ThresholdRule::AtMost(2).theta(5), 2);
        assert_eq!(ThresholdRule::AtMost(0).theta(5), 1);
    }

    #[test]
    fn default_policy_accepts_any_candidate() {
        let mut db = ThreatDatabase::default();
        let c = Candidate::new(vec![h(1)], "fork:1:0", 0);
        let ins = confirm_threat(&mut db, &c, &ThreatPolicy::default()).unwrap();
        assert_eq!(ins.id, 1);
        assert_eq!(db.len(), 1);
    }

    #[test]
    fn min_length_discards_short() {
        let mut db = ThreatDatabase::default();
        let policy = ThreatPolicy {
            min_length: 2,
            ..ThreatPolicy::default()
        };
        let c = Candidate::new(vec![h(1)], "x", 0);
        assert_eq!(
            confirm_threat(&mut db, &c, &policy),
            Err(Rejection::TooShort { len: 1, min: 2 })
        );
        assert!(db.is_empty());
    }

    #[test]
    fn label_filter() {
        let mut db = ThreatDatabase::default();
        let policy = ThreatPolicy {
            label_prefixes: Some(vec!["fork:".into()]),
            ..ThreatPolicy::default()
        };
        assert!(confirm_threat(&mut db, &Candidate::new(vec![h(1)], "fork:3:10", 0), &policy).is_ok());
        assert_eq!(
            confirm_threat(&mut db, &Candidate::new(vec![h(2)], "manual", 0), &policy),
            Err(Rejection::LabelNotAllowed("manual".into()))
        );
    }

    #[test]
    fn duplicates_and_prefixes() {
        let mut db = ThreatDatabase::default();
        let policy = ThreatPolicy::default();
        confirm_threat(&mut db, &Candidate::new(vec![h(1), h(2), h(3)], "a", 0), &policy).unwrap();
        assert_eq!(
            confirm_threat(&mut db, &Candidate::new(vec![h(1), h(2), h(3)], "b", 1), &policy),
            Err(Rejection::Duplicate(1))
        );
        assert_eq!(
            confirm_threat(&mut db, &Candidate::new(vec![h(1), h(2)], "c", 1), &policy),
            Err(Rejection::KnownPrefix(1))
        );
        let keep = ThreatPolicy {
            keep_recurrent_prefixes: true,
            ..policy
        };
        assert!(confirm_threat(&mut db, &Candidate::new(vec![h(1), h(2)], "c", 1), &keep).is_ok());
    }

    #[test]
    fn long_candidates_truncated() {
        let mut db = ThreatDatabase::default();
        let policy = ThreatPolicy {
            max_length: 2,
            ..ThreatPolicy::default()
        };
        let ins = confirm_threat(&mut db, &Candidate::new(vec![h(1), h(2), h(3)], "a", 0), &policy).unwrap();
        assert_eq!(db.get(ins.id).unwrap().hashes, vec![h(1), h(2)]);
    }

    #[test]
    fn no_eviction_within_capacity() {
        let mut db = ThreatDatabase::new(3);
        for i in 0..3 {
            assert!(db.insert(vec![h(i)], "x", u64::from(i)).evicted.is_empty());
        }
        assert_eq!(db.prune(), Vec::<SeqId>::new());
    }

    #[test]
    fn unmatched_overflow_evicts_earliest_first_seen() {
        let mut db = ThreatDatabase::new(2);
        db.insert(vec![h(1)], "a", 10);
        db.insert(vec![h(2)], "b", 5);
        let ins = db.insert(vec![h(3)], "c", 20);
        assert_eq!(ins.evicted, vec![2]);
        assert_eq!(db.len(), 2);
    }

    #[test]
    fn recently_matched_survives() {
        // Scripted history: a (t=0), b (t=1); a matched at t=50; c arrives t=60.
        // Recency: a=50, b=1, c=60, so b goes.
        let mut db = ThreatDatabase::new(2);
        let a = db.insert(vec![h(1)], "a", 0).id;
        let b = db.insert(vec![h(2)], "b", 1).id;
        db.record_match(a, 50);
        let ins = db.insert(vec![h(3)], "c", 60);
        assert_eq!(ins.evicted, vec![b]);
        assert!(db.contains(a));
        assert!(db.occurrences(&h(2)).is_empty());
        assert_eq!(db.generation(), 1);
    }

    #[test]
    fn capacity_two_new_insert_evicts_least_recently_matched() {
        let mut db = ThreatDatabase::new(2);
        let a = db.insert(vec![h(1)], "a", 0).id;
        let b = db.insert(vec![h(2)], "b", 1).id;
        db.record_match(b, 5);
        db.record_match(a, 9);
        let ins = db.insert(vec![h(3)], "c", 10);
        assert_eq!(ins.evicted, vec![b]);
        assert!(db.len() <= db.capacity());
    }

    #[test]
    fn index_positions_are_one_based() {
        let mut db = ThreatDatabase::default();
        let id = db.insert(vec![h(1), h(2), h(1)], "a", 0).id;
        assert_eq!(db.occurrences(&h(1)), &[(id, 1), (id, 3)]);
        assert_eq!(db.total_length(), 3);
    }

    #[test]
    fn candidate_digest_ignores_label() {
        let a = Candidate::new(vec![h(1), h(2)], "x", 0);
        let b = Candidate::new(vec![h(1), h(2)], "y", 7);
        let c = Candidate::new(vec![h(2), h(1)], "x", 0);
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }
}
