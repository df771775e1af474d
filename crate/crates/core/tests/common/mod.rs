#![allow(dead_code)]

use badsim_core::chain::TxHash;
use badsim_core::threat::{MatcherState, SeqId, ThreatDatabase, ThresholdRule};
use rand::Rng;

pub fn sym(s: u8) -> TxHash {
    TxHash([s; 32])
}

/// A matcher test instance over a small symbol alphabet.
#[derive(Debug, Clone)]
pub struct Instance {
    pub seqs: Vec<Vec<u8>>,
    pub stream: Vec<u8>,
}

impl Instance {
    pub fn random<R: Rng>(rng: &mut R, max_k: usize, max_len: usize, alphabet: u8, max_stream: usize) -> Self {
        let k = rng.gen_range(1..=max_k);
        let seqs = (0..k)
            .map(|_| {
                let l = rng.gen_range(1..=max_len);
                (0..l).map(|_| rng.gen_range(0..alphabet)).collect()
            })
            .collect();
        let n = rng.gen_range(0..=max_stream);
        let stream = (0..n).map(|_| rng.gen_range(0..alphabet)).collect();
        Self { seqs, stream }
    }

    /// Sequence `i` gets id `i + 1`.
    pub fn db(&self) -> ThreatDatabase {
        let mut db = ThreatDatabase::default();
        for s in &self.seqs {
            db.insert(s.iter().map(|&c| sym(c)).collect(), "t", 0);
        }
        db
    }

    pub fn thetas(&self, rule: ThresholdRule) -> Vec<usize> {
        self.seqs.iter().map(|s| rule.theta(s.len())).collect()
    }
}

fn is_subsequence(needle: &[u8], hay: &[u8]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|c| it.any(|h| h == c))
}

/// Brute force: sequence `i` is detected at step `t` when its first θᵢ
/// symbols are a subsequence of the stream since its previous detection.
/// Returns (step, ascending ids) for every step with a detection.
pub fn oracle_detections(inst: &Instance, thetas: &[usize]) -> Vec<(usize, Vec<SeqId>)> {
    let mut since = vec![0usize; inst.seqs.len()];
    let mut out = Vec::new();
    for t in 0..inst.stream.len() {
        let mut fired = Vec::new();
        for (i, s) in inst.seqs.iter().enumerate() {
            if is_subsequence(&s[..thetas[i]], &inst.stream[since[i]..=t]) {
                fired.push(i);
            }
        }
        for &i in &fired {
            since[i] = t + 1;
        }
        if !fired.is_empty() {
            out.push((t, fired.iter().map(|&i| i as SeqId + 1).collect()));
        }
    }
    out
}

pub fn streaming_detections(inst: &Instance, rule: ThresholdRule) -> Vec<(usize, Vec<SeqId>)> {
    let db = inst.db();
    let mut m = MatcherState::new(rule);
    let mut out = Vec::new();
    for (t, &c) in inst.stream.iter().enumerate() {
        let mut ids = m.step(&db, &sym(c)).detected();
        if !ids.is_empty() {
            ids.sort_unstable();
            out.push((t, ids));
        }
    }
    out
}
