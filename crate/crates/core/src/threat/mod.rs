//! Fork-derived threat intelligence: the attack-sequence database, the
//! streaming matcher that filters incoming blocks against it, and the steps
//! that turn fork records into new database entries.

mod codec;
mod db;
mod filter;
mod matcher;

pub use codec::{deserialize_db, export_json, serialize_db, MAGIC, VERSION};
pub use db::{
    confirm_threat, AttackSequence, Candidate, Insertion, Rejection, SeqId, ThreatDatabase, ThreatPolicy,
    ThresholdRule, DEFAULT_CAPACITY, DEFAULT_MAX_SEQUENCE_LEN,
};
pub use filter::{filter_block, inspect_fork, FilterOutcome};
pub use matcher::{matcher_step, MatcherState, PartialSequence, Verdict};
