use super::store::{ChainError, EnhancedChainStore, ValidationMode};
use super::types::{Block, BlockHash, Output, Transaction};
use super::validate::{apply_transaction, validate_transaction};

/// Coinbase reward paid to the miner's tag.
pub const BLOCK_REWARD: u64 = 50;

/// Instant on-demand block production. The nonce is a plain counter; there
/// is no proof of work.
#[derive(Debug, Clone)]
pub struct Miner {
    tag: Vec<u8>,
    next_nonce: u64,
}

impl Miner {
    pub fn new(tag: impl AsRef<[u8]>) -> Self {
        Self {
            tag: tag.as_ref().to_vec(),
            next_nonce: 1,
        }
    }

    pub fn tag(&self) -> &[u8] {
        &self.tag
    }

    fn fresh_nonce(&mut self) -> u64 {
        let n = self.next_nonce;
        self.next_nonce += 1;
        n
    }

    fn coinbase(&self, height: u64, nonce: u64) -> Transaction {
        let mut payload = self.tag.clone();
        payload.extend_from_slice(&height.to_le_bytes());
        Transaction {
            inputs: Vec::new(),
            outputs: vec![Output {
                amount: BLOCK_REWARD,
                spending_condition: self.tag.clone(),
            }],
            payload,
            nonce,
        }
    }

    /// Builds (without inserting) a block on `parent` holding a fresh
    /// coinbase followed by `txs`, which must be valid in sequence against
    /// the parent's branch. Headers-only stores cannot check spends, so they
    /// accept any transactions.
    pub fn mine_block(
        &mut self,
        store: &EnhancedChainStore,
        parent: &BlockHash,
        txs: Vec<Transaction>,
    ) -> Result<Block, ChainError> {
        let parent_block = store.get(parent).ok_or(ChainError::UnknownParent(*parent))?;
        let height = parent_block.height + 1;
        if store.mode() == ValidationMode::Full {
            let mut utxo = store
                .utxo_at(parent)
                .ok_or(ChainError::UnknownParent(*parent))?;
            for (i, tx) in txs.iter().enumerate() {
                validate_transaction(tx, &utxo).map_err(|violation| ChainError::InvalidTx {
                    index: i,
                    violation,
                })?;
                apply_transaction(&mut utxo, tx);
            }
        }
        Ok(self.forge_block(*parent, height, txs))
    }

    /// Assembles a block without any validation. Adversaries use this to
    /// produce blocks only light clients would accept.
    pub fn forge_block(&mut self, parent: BlockHash, height: u64, txs: Vec<Transaction>) -> Block {
        let nonce = self.fresh_nonce();
        let mut all = Vec::with_capacity(txs.len() + 1);
        all.push(self.coinbase(height, nonce));
        all.extend(txs);
        Block {
            prev: parent,
            nonce,
            txs: all,
            height,
        }
    }
}
