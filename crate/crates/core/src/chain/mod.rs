//! Ledger primitives and the fork-retaining block store.

mod miner;
mod store;
mod types;
mod validate;

pub use miner::{Miner, BLOCK_REWARD};
pub use store::{BlockInvalid, ChainError, ChainEvent, EnhancedChainStore, ForkRecord, ValidationMode};
pub use types::{
    hash_transaction, Block, BlockHash, GenesisConfig, Input, OutPoint, Output, Transaction, TxHash,
};
pub use validate::{apply_transaction, validate_transaction, TxViolation, UtxoSet, UtxoView};
