use crate::chain::{Block, BlockHash, ForkRecord};
use crate::encoding::varint_len;
use crate::metrics::TrafficKind;
use crate::threat::Candidate;

use super::config::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub enum MessageKind {
    BlockAnnounce(Block),
    ForkIntel { record: ForkRecord, candidate: Candidate },
    GetBlocks { locator: Vec<BlockHash> },
}

impl MessageKind {
    pub fn traffic(&self) -> TrafficKind {
        match self {
            MessageKind::BlockAnnounce(_) => TrafficKind::Block,
            MessageKind::ForkIntel { .. } => TrafficKind::ForkIntel,
            MessageKind::GetBlocks { .. } => TrafficKind::GetBlocks,
        }
    }

    /// Canonical encoded size of the payload.
    pub fn size_bytes(&self) -> u64 {
        let n = match self {
            MessageKind::BlockAnnounce(b) => b.encoded_len(),
            MessageKind::ForkIntel { record, candidate } => record.encoded_len() + candidate.encoded_len(),
            MessageKind::GetBlocks { locator } => varint_len(locator.len() as u64) + 32 * locator.len(),
        };
        n as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: MessageKind,
    pub size_bytes: u64,
    /// Tick the message entered the network.
    pub sent_at: u64,
}

impl Message {
    pub fn new(from: NodeId, to: NodeId, kind: MessageKind, sent_at: u64) -> Self {
        let size_bytes = kind.size_bytes();
        Self {
            from,
            to,
            kind,
            size_bytes,
            sent_at,
        }
    }
}
