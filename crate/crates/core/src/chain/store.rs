use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use thiserror::Error;

use super::types::{Block, BlockHash, GenesisConfig, OutPoint, Output, Transaction, TxHash};
use super::validate::{apply_transaction, validate_transaction, TxViolation, UtxoSet, UtxoView};
use crate::encoding::put_varint;

/// How much of a block the store checks before accepting it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValidationMode {
    /// Structure, linkage and every transaction against the branch UTXO set.
    #[default]
    Full,
    /// Structure and linkage only; no UTXO set is kept (light clients).
    HeadersOnly,
}

/// Outcome of a successful [`EnhancedChainStore::append_block`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainEvent {
    ExtendedTip,
    /// The block's parent already had a child: a new branch starts here.
    CreatedFork,
    /// The block extends a side branch without overtaking the tip.
    ExtendedFork,
    /// The block's branch became strictly longer than the previous tip's.
    Reorg {
        old_tip: BlockHash,
        new_tip: BlockHash,
        /// Abandoned blocks, fork head excluded, oldest first.
        old_branch: Vec<BlockHash>,
        /// Newly adopted blocks, fork head excluded, oldest first.
        new_branch: Vec<BlockHash>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlockInvalid {
    #[error("height {got} does not follow parent height {parent}")]
    BadHeight { parent: u64, got: u64 },
    #[error("first transaction is not a coinbase")]
    MissingCoinbase,
    #[error("transaction {0} is a second coinbase")]
    ExtraCoinbase(usize),
    #[error("transaction {index}: {violation}")]
    Transaction { index: usize, violation: TxViolation },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("block {0} already stored")]
    DuplicateBlock(BlockHash),
    #[error("parent {0} is not in the store")]
    UnknownParent(BlockHash),
    #[error("invalid block: {0}")]
    InvalidBlock(BlockInvalid),
    #[error("transaction {index} cannot be mined: {violation}")]
    InvalidTx { index: usize, violation: TxViolation },
    #[error("block {0} is on the mainstream chain")]
    NotAFork(BlockHash),
    #[error("block {0} is not in the store")]
    UnknownBlock(BlockHash),
}

/// What a node remembers about a branch it abandoned during a reorg.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForkRecord {
    /// Last block shared by the branch and the mainstream chain.
    pub fork_head: BlockHash,
    /// Orphaned blocks from the fork head (exclusive) to the branch leaf.
    pub branch_blocks: Vec<Block>,
    /// Arrival tick of the first branch block.
    pub start_time: u64,
    pub detect_time: u64,
    /// Non-coinbase transactions of the branch that the mainstream chain
    /// does not contain, in branch order.
    pub suspicious_txs: Vec<TxHash>,
    pub origin_node: u64,
}

impl ForkRecord {
    /// `fork_head 32B, varint #blocks, blocks, start u64, detect u64,
    /// varint #suspicious, hashes 32B each, varint origin`.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self.fork_head.as_bytes());
        put_varint(out, self.branch_blocks.len() as u64);
        for block in &self.branch_blocks {
            block.encode_into(out);
        }
        out.extend_from_slice(&self.start_time.to_le_bytes());
        out.extend_from_slice(&self.detect_time.to_le_bytes());
        put_varint(out, self.suspicious_txs.len() as u64);
        for h in &self.suspicious_txs {
            out.extend_from_slice(h.as_bytes());
        }
        put_varint(out, self.origin_node);
    }

    pub fn encoded_len(&self) -> usize {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out.len()
    }

    pub fn leaf(&self) -> Option<BlockHash> {
        self.branch_blocks.last().map(Block::hash)
    }
}

#[derive(Debug, Clone)]
struct Entry {
    block: Block,
    arrival_seq: u64,
    arrival_tick: u64,
}

/// Block DAG that keeps every accepted block. The mainstream chain is the
/// longest one (first seen wins ties); whenever the tip moves to another
/// branch, the abandoned branch is summarised in a [`ForkRecord`].
#[derive(Debug, Clone)]
pub struct EnhancedChainStore {
    origin: u64,
    mode: ValidationMode,
    genesis: BlockHash,
    blocks: HashMap<BlockHash, Entry>,
    children: HashMap<BlockHash, Vec<BlockHash>>,
    tip: BlockHash,
    /// Mainstream block hashes indexed by height.
    main_chain: Vec<BlockHash>,
    utxo: UtxoSet,
    fork_records: Vec<ForkRecord>,
    next_seq: u64,
}

/// UTXO view that stages spends and creations on top of a base set.
struct Overlay<'a> {
    base: &'a UtxoSet,
    spent: BTreeSet<OutPoint>,
    created: BTreeMap<OutPoint, Output>,
}

impl<'a> Overlay<'a> {
    fn new(base: &'a UtxoSet) -> Self {
        Self {
            base,
            spent: BTreeSet::new(),
            created: BTreeMap::new(),
        }
    }

    fn apply(&mut self, tx: &Transaction) {
        for input in &tx.inputs {
            if self.created.remove(&input.outpoint).is_none() {
                self.spent.insert(input.outpoint);
            }
        }
        let txid = tx.hash();
        for (index, output) in tx.outputs.iter().enumerate() {
            self.created.insert(
                OutPoint {
                    txid,
                    index: index as u32,
                },
                output.clone(),
            );
        }
    }
}

impl UtxoView for Overlay<'_> {
    fn get_output(&self, outpoint: &OutPoint) -> Option<&Output> {
        if let Some(out) = self.created.get(outpoint) {
            return Some(out);
        }
        if self.spent.contains(outpoint) {
            return None;
        }
        self.base.get(outpoint)
    }
}

fn check_structure(block: &Block) -> Result<(), BlockInvalid> {
    match block.txs.first() {
        Some(tx) if tx.is_coinbase() => {}
        _ => return Err(BlockInvalid::MissingCoinbase),
    }
    if let Some(i) = block.txs.iter().skip(1).position(Transaction::is_coinbase) {
        return Err(BlockInvalid::ExtraCoinbase(i + 1));
    }
    Ok(())
}

fn check_transactions(block: &Block, base: &UtxoSet) -> Result<(), BlockInvalid> {
    let mut view = Overlay::new(base);
    for (index, tx) in block.txs.iter().enumerate() {
        if !tx.is_coinbase() {
            validate_transaction(tx, &view)
                .map_err(|violation| BlockInvalid::Transaction { index, violation })?;
        }
        view.apply(tx);
    }
    Ok(())
}

impl EnhancedChainStore {
    pub fn new(genesis: &GenesisConfig, origin: u64, mode: ValidationMode) -> Self {
        Self::with_genesis_block(genesis.block(), origin, mode)
    }

    pub fn with_genesis_block(genesis: Block, origin: u64, mode: ValidationMode) -> Self {
        let hash = genesis.hash();
        let mut utxo = UtxoSet::new();
        if mode == ValidationMode::Full {
            for tx in &genesis.txs {
                apply_transaction(&mut utxo, tx);
            }
        }
        let mut blocks = HashMap::new();
        blocks.insert(
            hash,
            Entry {
                block: genesis,
                arrival_seq: 0,
                arrival_tick: 0,
            },
        );
        Self {
            origin,
            mode,
            genesis: hash,
            blocks,
            children: HashMap::new(),
            tip: hash,
            main_chain: vec![hash],
            utxo,
            fork_records: Vec::new(),
            next_seq: 1,
        }
    }

    pub fn origin(&self) -> u64 {
        self.origin
    }

    pub fn mode(&self) -> ValidationMode {
        self.mode
    }

    pub fn genesis(&self) -> BlockHash {
        self.genesis
    }

    pub fn tip(&self) -> BlockHash {
        self.tip
    }

    pub fn tip_height(&self) -> u64 {
        (self.main_chain.len() - 1) as u64
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn contains(&self, hash: &BlockHash) -> bool {
        self.blocks.contains_key(hash)
    }

    pub fn get(&self, hash: &BlockHash) -> Option<&Block> {
        self.blocks.get(hash).map(|e| &e.block)
    }

    pub fn arrival_tick(&self, hash: &BlockHash) -> Option<u64> {
        self.blocks.get(hash).map(|e| e.arrival_tick)
    }

    /// Insertion order; genesis is 0.
    pub fn arrival_seq(&self, hash: &BlockHash) -> Option<u64> {
        self.blocks.get(hash).map(|e| e.arrival_seq)
    }

    pub fn utxo(&self) -> &UtxoSet {
        &self.utxo
    }

    pub fn fork_records(&self) -> &[ForkRecord] {
        &self.fork_records
    }

    pub fn main_chain(&self) -> &[BlockHash] {
        &self.main_chain
    }

    pub fn children(&self, hash: &BlockHash) -> &[BlockHash] {
        self.children.get(hash).map_or(&[], Vec::as_slice)
    }

    pub fn is_on_main_chain(&self, hash: &BlockHash) -> bool {
        self.blocks
            .get(hash)
            .and_then(|e| self.main_chain.get(e.block.height as usize))
            == Some(hash)
    }

    /// Blocks without children, in insertion order.
    pub fn leaves(&self) -> Vec<BlockHash> {
        let mut leaves: Vec<_> = self
            .blocks
            .iter()
            .filter(|(h, _)| self.children(h).is_empty())
            .map(|(h, e)| (e.arrival_seq, *h))
            .collect();
        leaves.sort();
        leaves.into_iter().map(|(_, h)| h).collect()
    }

    /// Hashes from genesis up to and including `hash`.
    pub fn path_from_genesis(&self, hash: &BlockHash) -> Option<Vec<BlockHash>> {
        let mut path = Vec::new();
        let mut cur = *hash;
        loop {
            let entry = self.blocks.get(&cur)?;
            path.push(cur);
            if cur == self.genesis {
                break;
            }
            cur = entry.block.prev;
        }
        path.reverse();
        Some(path)
    }

    /// UTXO set obtained by replaying the chain ending at `hash`. Empty for
    /// headers-only stores.
    pub fn utxo_at(&self, hash: &BlockHash) -> Option<UtxoSet> {
        if *hash == self.tip {
            return Some(self.utxo.clone());
        }
        let path = self.path_from_genesis(hash)?;
        let mut utxo = UtxoSet::new();
        if self.mode == ValidationMode::Full {
            for h in path {
                for tx in &self.blocks[&h].block.txs {
                    apply_transaction(&mut utxo, tx);
                }
            }
        }
        Some(utxo)
    }

    /// Lowest common ancestor of `hash` and the current tip, i.e. the first
    /// mainstream block met when walking back from `hash`.
    fn mainstream_ancestor(&self, hash: &BlockHash) -> Option<BlockHash> {
        let mut cur = *hash;
        loop {
            if self.is_on_main_chain(&cur) {
                return Some(cur);
            }
            cur = self.blocks.get(&cur)?.block.prev;
        }
    }

    /// Inserts a block whose parent is already stored.
    pub fn append_block(&mut self, block: Block, now: u64) -> Result<ChainEvent, ChainError> {
        let hash = block.hash();
        if self.blocks.contains_key(&hash) {
            return Err(ChainError::DuplicateBlock(hash));
        }
        let parent = self
            .blocks
            .get(&block.prev)
            .ok_or(ChainError::UnknownParent(block.prev))?;
        let parent_height = parent.block.height;
        if block.height != parent_height + 1 {
            return Err(ChainError::InvalidBlock(BlockInvalid::BadHeight {
                parent: parent_height,
                got: block.height,
            }));
        }
        check_structure(&block).map_err(ChainError::InvalidBlock)?;

        let extends_tip = block.prev == self.tip;
        let overtakes = block.height > self.tip_height();
        let mut branch_utxo = None;
        if self.mode == ValidationMode::Full {
            if extends_tip {
                check_transactions(&block, &self.utxo).map_err(ChainError::InvalidBlock)?;
            } else {
                let base = self
                    .utxo_at(&block.prev)
                    .ok_or(ChainError::UnknownParent(block.prev))?;
                check_transactions(&block, &base).map_err(ChainError::InvalidBlock)?;
                if overtakes {
                    branch_utxo = Some(base);
                }
            }
        }

        let had_children = !self.children(&block.prev).is_empty();
        self.children.entry(block.prev).or_default().push(hash);
        let height = block.height as usize;
        let prev = block.prev;
        self.blocks.insert(
            hash,
            Entry {
                block,
                arrival_seq: self.next_seq,
                arrival_tick: now,
            },
        );
        self.next_seq += 1;

        if extends_tip {
            if self.mode == ValidationMode::Full {
                for tx in &self.blocks[&hash].block.txs {
                    apply_transaction(&mut self.utxo, tx);
                }
            }
            self.main_chain.push(hash);
            self.tip = hash;
            return Ok(ChainEvent::ExtendedTip);
        }
        if !overtakes {
            return Ok(if had_children {
                ChainEvent::CreatedFork
            } else {
                ChainEvent::ExtendedFork
            });
        }

        // Reorg: the new block's branch is strictly longer than the tip's.
        let old_tip = self.tip;
        let fork_head = self
            .mainstream_ancestor(&prev)
            .expect("every stored block descends from genesis");
        let fork_height = self.blocks[&fork_head].block.height as usize;
        let old_branch = self.main_chain[fork_height + 1..].to_vec();

        let mut new_branch = Vec::with_capacity(height - fork_height);
        let mut cur = hash;
        while cur != fork_head {
            new_branch.push(cur);
            cur = self.blocks[&cur].block.prev;
        }
        new_branch.reverse();

        self.main_chain.truncate(fork_height + 1);
        self.main_chain.extend_from_slice(&new_branch);
        self.tip = hash;
        if let Some(mut utxo) = branch_utxo {
            for tx in &self.blocks[&hash].block.txs {
                apply_transaction(&mut utxo, tx);
            }
            self.utxo = utxo;
        }

        let record = self
            .extract_fork_record(&old_tip, now)
            .expect("abandoned tip is off the new mainstream chain");
        self.fork_records.push(record);

        Ok(ChainEvent::Reorg {
            old_tip,
            new_tip: hash,
            old_branch,
            new_branch,
        })
    }

    /// Summarises the branch ending at `leaf` relative to the current
    /// mainstream chain. Does not modify the store.
    pub fn extract_fork_record(&self, leaf: &BlockHash, now: u64) -> Result<ForkRecord, ChainError> {
        if !self.blocks.contains_key(leaf) {
            return Err(ChainError::UnknownBlock(*leaf));
        }
        if self.is_on_main_chain(leaf) {
            return Err(ChainError::NotAFork(*leaf));
        }
        let fork_head = self
            .mainstream_ancestor(leaf)
            .ok_or(ChainError::UnknownBlock(*leaf))?;

        let mut branch = Vec::new();
        let mut cur = *leaf;
        while cur != fork_head {
            let entry = &self.blocks[&cur];
            branch.push(cur);
            cur = entry.block.prev;
        }
        branch.reverse();

        let mainstream = self.mainstream_txids();
        let mut seen = HashSet::new();
        let mut suspicious_txs = Vec::new();
        for h in &branch {
            for tx in self.blocks[h].block.non_coinbase() {
                let txid = tx.hash();
                if !mainstream.contains(&txid) && seen.insert(txid) {
                    suspicious_txs.push(txid);
                }
            }
        }

        Ok(ForkRecord {
            fork_head,
            start_time: self.blocks[&branch[0]].arrival_tick,
            detect_time: now,
            branch_blocks: branch
                .iter()
                .map(|h| self.blocks[h].block.clone())
                .collect(),
            suspicious_txs,
            origin_node: self.origin,
        })
    }

    /// Hashes of every transaction on the mainstream chain.
    pub fn mainstream_txids(&self) -> HashSet<TxHash> {
        self.main_chain
            .iter()
            .flat_map(|h| self.blocks[h].block.txs.iter().map(Transaction::hash))
            .collect()
    }

    /// Mainstream hashes, newest first: the last ten one by one, then with
    /// doubling gaps, always ending at genesis.
    pub fn block_locator(&self) -> Vec<BlockHash> {
        let mut out = Vec::new();
        let mut height = self.main_chain.len() as i64 - 1;
        let mut step = 1i64;
        while height > 0 {
            out.push(self.main_chain[height as usize]);
            if out.len() >= 10 {
                step *= 2;
            }
            height -= step;
        }
        out.push(self.genesis);
        out
    }

    /// Mainstream blocks following the first locator entry this store also
    /// has on its mainstream chain, at most `max` of them, oldest first.
    pub fn blocks_after_locator(&self, locator: &[BlockHash], max: usize) -> Vec<Block> {
        let start = locator
            .iter()
            .find(|h| self.is_on_main_chain(h))
            .map_or(0, |h| self.blocks[h].block.height as usize);
        self.main_chain
            .iter()
            .skip(start + 1)
            .take(max)
            .map(|h| self.blocks[h].block.clone())
            .collect()
    }
}
