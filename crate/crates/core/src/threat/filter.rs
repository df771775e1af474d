use std::collections::{BTreeMap, HashSet};

use super::db::{Candidate, SeqId, ThreatDatabase};
use super::matcher::{MatcherState, Verdict};
use crate::chain::{Block, ForkRecord, Transaction, TxHash};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterOutcome {
    pub accepted: Vec<Transaction>,
    pub rejected: Vec<Transaction>,
    /// Every non-clean verdict, in block order.
    pub alerts: Vec<Verdict>,
    /// Sequences detected while scanning this block.
    pub detected: Vec<SeqId>,
    /// Largest single-step work seen while scanning this block.
    pub max_step_work: u64,
}

impl FilterOutcome {
    pub fn refuses_block(&self) -> bool {
        !self.rejected.is_empty()
    }
}

/// Runs the matcher over the block's non-coinbase transactions in order.
///
/// A transaction is rejected when its step detects an attack, or when it is
/// the next hash of a sequence already detected earlier in this block (the
/// rest of that attack instance). The coinbase is always accepted.
pub fn filter_block(state: &mut MatcherState, db: &ThreatDatabase, block: &Block) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    // Detected sequence id → 0-based index of the next expected hash.
    let mut tails: BTreeMap<SeqId, usize> = BTreeMap::new();
    for tx in &block.txs {
        if tx.is_coinbase() {
            out.accepted.push(tx.clone());
            continue;
        }
        let h = tx.hash();
        let verdict = state.step(db, &h);
        out.max_step_work = out.max_step_work.max(state.last_step_work());

        let mut reject = false;
        tails.retain(|id, next| {
            let Some(seq) = db.get(*id) else { return false };
            if seq.hashes.get(*next) == Some(&h) {
                reject = true;
                *next += 1;
            }
            *next < seq.len()
        });

        let detected = verdict.detected();
        for &id in &detected {
            reject = true;
            if let Some(seq) = db.get(id) {
                let theta = state.threshold().theta(seq.len());
                if theta < seq.len() {
                    tails.insert(id, theta);
                }
            }
        }
        out.detected.extend(detected);
        if !verdict.is_clean() {
            out.alerts.push(verdict);
        }
        if reject {
            out.rejected.push(tx.clone());
        } else {
            out.accepted.push(tx.clone());
        }
    }
    out
}

/// Turns a fork record into attack-sequence candidates: one candidate made
/// of the record's suspicious transactions (minus any now on `mainstream`),
/// or none if nothing suspicious remains. `recurrence_of` is set when the
/// candidate equals or is a prefix of a stored sequence.
pub fn inspect_fork(record: &ForkRecord, db: &ThreatDatabase, mainstream: &HashSet<TxHash>) -> Vec<Candidate> {
    let hashes: Vec<TxHash> = record
        .suspicious_txs
        .iter()
        .filter(|h| !mainstream.contains(h))
        .copied()
        .collect();
    if hashes.is_empty() {
        return Vec::new();
    }
    let mut candidate = Candidate::new(
        hashes,
        format!("fork:{}:{}", record.origin_node, record.start_time),
        record.detect_time,
    );
    candidate.recurrence_of = db.find_recurrence(&candidate.hashes).map(|(id, _)| id);
    vec![candidate]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{BlockHash, GenesisConfig, Miner};
    use crate::threat::db::ThresholdRule;

    fn txs(g: &GenesisConfig, tags: &[&str]) -> Vec<Transaction> {
        tags.iter()
            .enumerate()
            .map(|(i, t)| g.payload_transaction(i as u32, t.as_bytes(), b"r"))
            .collect()
    }

    fn block_of(txs: Vec<Transaction>) -> Block {
        Miner::new("m").forge_block(BlockHash::ZERO, 1, txs)
    }

    #[test]
    fn no_overlap_all_accepted() {
        let g = GenesisConfig::default();
        let mut db = ThreatDatabase::default();
        db.insert(vec![TxHash([1; 32])], "x", 0);
        let b = block_of(txs(&g, &["p", "q"]));
        let out = filter_block(&mut MatcherState::new(ThresholdRule::Full), &db, &b);
        assert_eq!(out.accepted.len(), 3);
        assert!(out.rejected.is_empty());
        assert!(out.alerts.is_empty());
        assert!(!out.refuses_block());
    }

    #[test]
    fn completing_tx_and_rest_of_instance_rejected() {
        let g = GenesisConfig::default();
        let t = txs(&g, &["a", "b", "c", "d"]);
        let mut db = ThreatDatabase::default();
        db.insert(t[..3].iter().map(Transaction::hash).collect(), "s", 0);
        let mut m = MatcherState::new(ThresholdRule::AtMost(2));

        // First block carries the prefix: accepted, one alert.
        let first = filter_block(&mut m, &db, &block_of(vec![t[0].clone()]));
        assert!(!first.refuses_block());
        assert_eq!(first.alerts.len(), 1);

        // Second block completes θ=2 with b; c is the tail of that instance.
        let second = filter_block(&mut m, &db, &block_of(vec![t[1].clone(), t[3].clone(), t[2].clone()]));
        let rejected: Vec<_> = second.rejected.iter().map(Transaction::hash).collect();
        assert_eq!(rejected, vec![t[1].hash(), t[2].hash()]);
        assert_eq!(second.accepted.len(), 2); // coinbase and d
        assert_eq!(second.detected, vec![1]);
    }

    #[test]
    fn threshold_two_of_three_oracle() {
        // Oracle: replay the stream, reject from the θ-th sequence hash on.
        let g = GenesisConfig::default();
        let t = txs(&g, &["a", "b", "c"]);
        let seq: Vec<_> = t.iter().map(Transaction::hash).collect();
        let mut db = ThreatDatabase::default();
        db.insert(seq.clone(), "s", 0);
        let theta = 2;
        let expected_rejected: Vec<_> = seq[theta - 1..].to_vec();

        let out = filter_block(
            &mut MatcherState::new(ThresholdRule::AtMost(theta)),
            &db,
            &block_of(t.clone()),
        );
        let rejected: Vec<_> = out.rejected.iter().map(Transaction::hash).collect();
        assert_eq!(rejected, expected_rejected);
    }

    fn record(suspicious: Vec<TxHash>) -> ForkRecord {
        ForkRecord {
            fork_head: BlockHash::ZERO,
            branch_blocks: vec![block_of(Vec::new())],
            start_time: 12,
            detect_time: 40,
            suspicious_txs: suspicious,
            origin_node: 3,
        }
    }

    #[test]
    fn inspect_emits_one_candidate() {
        let g = GenesisConfig::default();
        let hs: Vec<_> = txs(&g, &["a", "b", "c"]).iter().map(Transaction::hash).collect();
        let got = inspect_fork(&record(hs.clone()), &ThreatDatabase::default(), &HashSet::new());
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].hashes, hs);
        assert_eq!(got[0].label, "fork:3:12");
        assert_eq!(got[0].recurrence_of, None);
    }

    #[test]
    fn inspect_drops_mainstream_txs() {
        let hs = vec![TxHash([1; 32]), TxHash([2; 32])];
        let main: HashSet<_> = hs.iter().copied().collect();
        assert!(inspect_fork(&record(hs), &ThreatDatabase::default(), &main).is_empty());
        assert!(inspect_fork(&record(Vec::new()), &ThreatDatabase::default(), &HashSet::new()).is_empty());
    }

    #[test]
    fn inspect_flags_recurrence() {
        let hs = vec![TxHash([1; 32]), TxHash([2; 32]), TxHash([3; 32])];
        let mut db = ThreatDatabase::default();
        let id = db.insert(hs.clone(), "known", 0).id;
        // Equality oracle and prefix case.
        let eq = inspect_fork(&record(hs.clone()), &db, &HashSet::new());
        assert_eq!(eq[0].recurrence_of, Some(id));
        let prefix = inspect_fork(&record(hs[..2].to_vec()), &db, &HashSet::new());
        assert_eq!(prefix[0].recurrence_of, Some(id));
        let other = inspect_fork(&record(vec![hs[1]]), &db, &HashSet::new());
        assert_eq!(other[0].recurrence_of, None);
    }
}
