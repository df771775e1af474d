//! Streaming partial-sequence matcher.
//!
//! The state is a set `U` of pairs `(i, j)`: the first `j` hashes of
//! sequence `i` have been seen, in order, in the stream so far (other hashes
//! may be interleaved). For each incoming hash `h`:
//!
//! 1. every `(i, j)` with `Sᵢ[j+1] = h` becomes `(i, j+1)`;
//! 2. if `Sᵢ[1] = h`, `(i, 1)` is added.
//!
//! Sequence `i` is detected once some `(i, θᵢ)` is present, after which all
//! of its entries are dropped so that the next instance is counted afresh.
//!
//! Lookups go through the database's hash index, so a step only touches the
//! `(i, position)` occurrences of `h`. The work counter counts those
//! occurrences; at most one per stored hash, hence at most `Σ ℓᵢ` per step.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::db::{SeqId, ThreatDatabase, ThresholdRule};
use crate::chain::TxHash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PartialSequence {
    pub seq_id: SeqId,
    pub matched: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Verdict {
    Clean,
    /// Pairs created or extended by this step, ascending.
    Suspicious { updated: Vec<PartialSequence> },
    /// `id` is the lowest detected sequence; `concurrent` lists any other
    /// sequences that reached their threshold on the same hash.
    AttackDetected { id: SeqId, concurrent: Vec<SeqId> },
}

impl Verdict {
    pub fn is_clean(&self) -> bool {
        matches!(self, Verdict::Clean)
    }

    pub fn detected(&self) -> Vec<SeqId> {
        match self {
            Verdict::AttackDetected { id, concurrent } => {
                std::iter::once(*id).chain(concurrent.iter().copied()).collect()
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MatcherState {
    threshold: ThresholdRule,
    entries: BTreeMap<SeqId, BTreeSet<usize>>,
    work_counter: u64,
    last_step_work: u64,
    db_generation: u64,
}

impl MatcherState {
    pub fn new(threshold: ThresholdRule) -> Self {
        Self {
            threshold,
            entries: BTreeMap::new(),
            work_counter: 0,
            last_step_work: 0,
            db_generation: 0,
        }
    }

    pub fn threshold(&self) -> ThresholdRule {
        self.threshold
    }

    /// Cumulative number of sequence-position inspections.
    pub fn work_counter(&self) -> u64 {
        self.work_counter
    }

    pub fn last_step_work(&self) -> u64 {
        self.last_step_work
    }

    /// |U|
    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries_for(&self, id: SeqId) -> usize {
        self.entries.get(&id).map_or(0, BTreeSet::len)
    }

    pub fn partials(&self) -> impl Iterator<Item = PartialSequence> + '_ {
        self.entries.iter().flat_map(|(&seq_id, js)| {
            js.iter().map(move |&matched| PartialSequence { seq_id, matched })
        })
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Installs a pair directly. Used to set up specific states, such as the
    /// saturated worst case.
    pub fn insert_partial(&mut self, p: PartialSequence) {
        self.entries.entry(p.seq_id).or_default().insert(p.matched);
    }

    pub fn step(&mut self, db: &ThreatDatabase, h: &TxHash) -> Verdict {
        if db.generation() != self.db_generation {
            self.entries.retain(|id, _| db.contains(*id));
            self.db_generation = db.generation();
        }

        let hits = db.occurrences(h);
        self.last_step_work = hits.len() as u64;
        self.work_counter += self.last_step_work;

        let mut updated = Vec::new();
        let mut detected = Vec::new();
        // Occurrences are sorted by (id, position); handle one id at a time
        // against the pre-step snapshot of its entries.
        for group in hits.chunk_by(|a, b| a.0 == b.0) {
            let id = group[0].0;
            let len = db.get(id).map_or(0, |s| s.len());
            let theta = self.threshold.theta(len);
            let old = self.entries.get(&id);
            let mut advanced_from = Vec::new();
            let mut new_js = Vec::new();
            for &(_, pos) in group {
                if pos == 1 {
                    new_js.push(1);
                } else if old.is_some_and(|js| js.contains(&(pos - 1))) {
                    advanced_from.push(pos - 1);
                    new_js.push(pos);
                }
            }
            if new_js.is_empty() {
                continue;
            }
            let mut next: BTreeSet<usize> = old.cloned().unwrap_or_default();
            for j in &advanced_from {
                next.remove(j);
            }
            next.extend(new_js.iter().copied());
            updated.extend(new_js.iter().map(|&matched| PartialSequence { seq_id: id, matched }));

            if next.last().is_some_and(|&max| max >= theta) {
                detected.push(id);
                self.entries.remove(&id);
            } else {
                self.entries.insert(id, next);
            }
        }

        if let Some((&id, rest)) = detected.split_first() {
            Verdict::AttackDetected {
                id,
                concurrent: rest.to_vec(),
            }
        } else if !updated.is_empty() {
            updated.sort_unstable();
            updated.dedup();
            Verdict::Suspicious { updated }
        } else {
            Verdict::Clean
        }
    }
}

/// Free-function form of [`MatcherState::step`].
pub fn matcher_step(state: &mut MatcherState, db: &ThreatDatabase, h: &TxHash) -> Verdict {
    state.step(db, h)
}
