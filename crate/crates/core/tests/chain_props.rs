use std::collections::{BTreeSet, HashSet};

use badsim_core::chain::{
    apply_transaction, Block, BlockHash, ChainEvent, EnhancedChainStore, GenesisConfig, Miner, Transaction, TxHash,
    UtxoSet, ValidationMode,
};
use badsim_core::encoding::Reader;
use proptest::prelude::*;

/// One block: attach to the `parent`-th stored block (modulo), carrying
/// payload transactions that spend the given funding outputs.
#[derive(Debug, Clone)]
struct Op {
    parent: usize,
    spends: Vec<(u32, u8)>,
}

fn ops(max: usize) -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        (any::<usize>(), prop::collection::vec((0u32..4, 0u8..3), 0..3))
            .prop_map(|(parent, spends)| Op { parent, spends }),
        1..=max,
    )
}

struct Built {
    store: EnhancedChainStore,
    appended: Vec<Block>,
    reorgs: usize,
    ever_main: BTreeSet<BlockHash>,
}

fn build(g: &GenesisConfig, ops: &[Op], mode: ValidationMode) -> Built {
    let mut store = EnhancedChainStore::new(g, 1, mode);
    let mut known: Vec<(BlockHash, u64)> = vec![(store.genesis(), 0)];
    let mut miner = Miner::new("p");
    let mut appended = Vec::new();
    let mut reorgs = 0;
    let mut ever_main: BTreeSet<BlockHash> = store.main_chain().iter().copied().collect();
    for (tick, op) in ops.iter().enumerate() {
        let (parent, height) = known[op.parent % known.len()];
        let txs: Vec<Transaction> = op
            .spends
            .iter()
            .map(|&(i, tag)| g.payload_transaction(i, &[tag], b"r"))
            .collect();
        let block = miner.forge_block(parent, height + 1, txs);
        let hash = block.hash();
        if let Ok(event) = store.append_block(block.clone(), tick as u64 + 1) {
            if matches!(event, ChainEvent::Reorg { .. }) {
                reorgs += 1;
            }
            known.push((hash, height + 1));
            appended.push(block);
            ever_main.extend(store.main_chain().iter().copied());
        }
    }
    Built {
        store,
        appended,
        reorgs,
        ever_main,
    }
}

fn replay_utxo(store: &EnhancedChainStore) -> UtxoSet {
    let mut utxo = UtxoSet::new();
    for h in store.main_chain() {
        for tx in &store.get(h).unwrap().txs {
            apply_transaction(&mut utxo, tx);
        }
    }
    utxo
}

proptest! {
    #[test]
    fn utxo_equals_mainstream_replay(ops in ops(64)) {
        let g = GenesisConfig::default();
        let b = build(&g, &ops, ValidationMode::Full);
        prop_assert_eq!(b.store.utxo(), &replay_utxo(&b.store));
    }

    #[test]
    fn tip_is_first_arrived_longest(ops in ops(64)) {
        let g = GenesisConfig::default();
        for mode in [ValidationMode::Full, ValidationMode::HeadersOnly] {
            let b = build(&g, &ops, mode);
            let s = &b.store;
            let max_h = b.appended.iter().map(|x| x.height).max().unwrap_or(0);
            prop_assert_eq!(s.tip_height(), max_h);
            if max_h > 0 {
                let first = b
                    .appended
                    .iter()
                    .filter(|x| x.height == max_h)
                    .map(Block::hash)
                    .min_by_key(|h| s.arrival_seq(h).unwrap())
                    .unwrap();
                prop_assert_eq!(s.tip(), first);
            }
            // Mainstream chain is linked and indexed by height.
            for (i, h) in s.main_chain().iter().enumerate() {
                let blk = s.get(h).unwrap();
                prop_assert_eq!(blk.height, i as u64);
                if i > 0 {
                    prop_assert_eq!(blk.prev, s.main_chain()[i - 1]);
                }
            }
        }
    }

    #[test]
    fn one_fork_record_per_reorg(ops in ops(64)) {
        let b = build(&GenesisConfig::default(), &ops, ValidationMode::Full);
        prop_assert_eq!(b.store.fork_records().len(), b.reorgs);
    }

    #[test]
    fn abandoned_mainstream_blocks_are_recorded(ops in ops(64)) {
        let b = build(&GenesisConfig::default(), &ops, ValidationMode::Full);
        let s = &b.store;
        let recorded: HashSet<BlockHash> = s
            .fork_records()
            .iter()
            .flat_map(|r| r.branch_blocks.iter().map(Block::hash))
            .collect();
        for h in &b.ever_main {
            prop_assert!(s.is_on_main_chain(h) || recorded.contains(h));
        }
        // Nothing is ever discarded.
        prop_assert_eq!(s.len(), b.appended.len() + 1);
    }

    #[test]
    fn replay_is_deterministic(ops in ops(64)) {
        let g = GenesisConfig::default();
        let b = build(&g, &ops, ValidationMode::Full);
        let mut again = EnhancedChainStore::new(&g, 1, ValidationMode::Full);
        for (i, blk) in b.appended.iter().enumerate() {
            again.append_block(blk.clone(), b.store.arrival_tick(&blk.hash()).unwrap_or(i as u64)).unwrap();
        }
        prop_assert_eq!(again.tip(), b.store.tip());
        prop_assert_eq!(again.main_chain(), b.store.main_chain());
        prop_assert_eq!(again.utxo(), b.store.utxo());
        prop_assert_eq!(again.fork_records(), b.store.fork_records());
    }

    #[test]
    fn fork_record_matches_walk_oracle(ops in ops(64)) {
        let b = build(&GenesisConfig::default(), &ops, ValidationMode::Full);
        let s = &b.store;
        let mainstream: HashSet<TxHash> = s
            .main_chain()
            .iter()
            .flat_map(|h| s.get(h).unwrap().txs.iter().map(Transaction::hash))
            .collect();
        for leaf in s.leaves() {
            if s.is_on_main_chain(&leaf) {
                prop_assert!(s.extract_fork_record(&leaf, 0).is_err());
                continue;
            }
            // Walk parents until the mainstream chain.
            let mut path = Vec::new();
            let mut cur = leaf;
            while !s.is_on_main_chain(&cur) {
                path.push(cur);
                cur = s.get(&cur).unwrap().prev;
            }
            path.reverse();
            let mut seen = HashSet::new();
            let suspicious: Vec<TxHash> = path
                .iter()
                .flat_map(|h| s.get(h).unwrap().non_coinbase().map(Transaction::hash).collect::<Vec<_>>())
                .filter(|t| !mainstream.contains(t) && seen.insert(*t))
                .collect();

            let r = s.extract_fork_record(&leaf, 99).unwrap();
            prop_assert_eq!(r.fork_head, cur);
            prop_assert_eq!(r.branch_blocks.iter().map(Block::hash).collect::<Vec<_>>(), path.clone());
            prop_assert_eq!(r.suspicious_txs, suspicious);
            prop_assert_eq!(r.start_time, s.arrival_tick(&path[0]).unwrap());
            prop_assert_eq!(r.detect_time, 99);
        }
    }

    #[test]
    fn block_encoding_round_trips(ops in ops(16)) {
        let b = build(&GenesisConfig::default(), &ops, ValidationMode::HeadersOnly);
        for blk in &b.appended {
            let bytes = blk.encode();
            prop_assert_eq!(bytes.len(), blk.encoded_len());
            let mut r = Reader::new(&bytes);
            prop_assert_eq!(&Block::decode_from(&mut r, blk.height).unwrap(), blk);
            prop_assert!(r.is_empty());
            for cut in 0..bytes.len() {
                prop_assert!(Block::decode_from(&mut Reader::new(&bytes[..cut]), blk.height).is_err());
            }
        }
    }
}

#[test]
fn genesis_coinbase_golden() {
    let expected = include_str!("../testdata/genesis_coinbase.hex").trim();
    let g = GenesisConfig::default();
    assert_eq!(g.coinbase().hash().to_hex(), expected);
    assert_eq!(g.block().txs[0].hash().to_hex(), expected);
}
