use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use serde::Serialize;
use serde_json::{json, Value};

use crate::chain::{
    Block, BlockHash, ChainError, ChainEvent, EnhancedChainStore, ForkRecord, Miner, Transaction, ValidationMode,
};
use crate::threat::{confirm_threat, filter_block, inspect_fork, Candidate, MatcherState, ThreatDatabase, ThreatPolicy};

use super::config::{NodeId, NodeSpec, Role};
use super::message::MessageKind;
use super::trace::TraceKind;

/// Most blocks answered to one get-blocks request.
pub const MAX_BLOCKS_PER_REPLY: usize = 500;

/// What the node sees of the network while handling one event.
#[derive(Debug, Clone, Copy)]
pub struct NodeCtx<'a> {
    pub now: u64,
    /// Peers the node can currently talk to.
    pub peers: &'a [NodeId],
    pub eclipsed: bool,
}

/// Side effects requested by a handler, applied by the event loop in order.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeAction {
    Send { to: NodeId, kind: MessageKind },
    Trace { kind: TraceKind, detail: Value },
    ExpireOrphan { block: BlockHash, at: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NodeStats {
    pub blocks_accepted: u64,
    pub blocks_refused: u64,
    pub blocks_invalid: u64,
    pub alerts: u64,
    pub reorgs: u64,
    pub intel_inserted: u64,
    pub intel_duplicates: u64,
    /// Largest matcher work of a single step.
    pub max_step_work: u64,
    /// Σℓᵢ of the database when `max_step_work` was reached.
    pub work_bound_at_max: u64,
    /// Steps whose work exceeded the database's Σℓᵢ. Always zero.
    pub bound_violations: u64,
}

#[derive(Debug, Clone)]
struct Orphan {
    block: Block,
    from: NodeId,
}

#[derive(Debug, Clone)]
pub struct Node {
    id: NodeId,
    spec: NodeSpec,
    store: EnhancedChainStore,
    db: ThreatDatabase,
    policy: ThreatPolicy,
    /// One matcher per sending peer.
    matchers: BTreeMap<NodeId, MatcherState>,
    miner: Miner,
    orphan_timeout: u64,
    /// Parent hash → blocks waiting for it.
    orphans: HashMap<BlockHash, Vec<Orphan>>,
    /// Orphan hash → its parent.
    orphan_parent: HashMap<BlockHash, BlockHash>,
    refused: HashSet<BlockHash>,
    seen_intel: HashSet<[u8; 32]>,
    deferred_in: Vec<(NodeId, ForkRecord, Candidate)>,
    deferred_out: Vec<(ForkRecord, Candidate)>,
    stats: NodeStats,
}

/// Payloads of the block's non-coinbase transactions, lossily decoded.
pub fn payloads(block: &Block) -> Vec<String> {
    block
        .non_coinbase()
        .map(|tx| String::from_utf8_lossy(&tx.payload).into_owned())
        .collect()
}

fn trace(actions: &mut Vec<NodeAction>, kind: TraceKind, detail: Value) {
    actions.push(NodeAction::Trace { kind, detail });
}

impl Node {
    pub fn new(
        id: NodeId,
        spec: NodeSpec,
        genesis: Block,
        policy: ThreatPolicy,
        db_capacity: usize,
        orphan_timeout: u64,
    ) -> Self {
        let mode = match spec.role {
            Role::Light => ValidationMode::HeadersOnly,
            Role::Full | Role::Attacker => ValidationMode::Full,
        };
        let miner = Miner::new(spec.name.as_bytes());
        Self {
            id,
            store: EnhancedChainStore::with_genesis_block(genesis, u64::from(id.0), mode),
            db: ThreatDatabase::new(db_capacity),
            policy,
            matchers: BTreeMap::new(),
            miner,
            orphan_timeout,
            orphans: HashMap::new(),
            orphan_parent: HashMap::new(),
            refused: HashSet::new(),
            seen_intel: HashSet::new(),
            deferred_in: Vec::new(),
            deferred_out: Vec::new(),
            stats: NodeStats::default(),
            spec,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn role(&self) -> Role {
        self.spec.role
    }

    pub fn bad_enabled(&self) -> bool {
        self.spec.bad_enabled
    }

    pub fn store(&self) -> &EnhancedChainStore {
        &self.store
    }

    pub fn db(&self) -> &ThreatDatabase {
        &self.db
    }

    pub fn db_mut(&mut self) -> &mut ThreatDatabase {
        &mut self.db
    }

    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }

    pub fn matcher(&self, peer: NodeId) -> Option<&MatcherState> {
        self.matchers.get(&peer)
    }

    /// Builds a block on `parent`, which need not be the tip. A valid block
    /// is also stored locally; a forged one is not checked or stored.
    pub fn build_block(
        &mut self,
        parent: BlockHash,
        height: u64,
        txs: Vec<Transaction>,
        forge: bool,
        now: u64,
    ) -> Result<Block, ChainError> {
        if forge {
            return Ok(self.miner.forge_block(parent, height, txs));
        }
        let block = self.miner.mine_block(&self.store, &parent, txs)?;
        self.store.append_block(block.clone(), now)?;
        Ok(block)
    }

    pub fn is_refused(&self, hash: &BlockHash) -> bool {
        self.refused.contains(hash)
    }

    pub fn orphan_count(&self) -> usize {
        self.orphan_parent.len()
    }

    pub fn deferred_intel(&self) -> usize {
        self.deferred_in.len()
    }

    fn relays(&self) -> bool {
        self.spec.role != Role::Attacker
    }

    fn runs_bad(&self) -> bool {
        self.spec.bad_enabled && self.spec.role != Role::Attacker
    }

    /// Appends a pre-agreed block without filtering or relaying.
    pub fn preload(&mut self, block: Block) -> Result<ChainEvent, ChainError> {
        self.store.append_block(block, 0)
    }

    /// Mines one block on the tip and relays it.
    pub fn mine(&mut self, txs: Vec<Transaction>, ctx: NodeCtx<'_>) -> Result<Vec<NodeAction>, ChainError> {
        let tip = self.store.tip();
        let block = self.miner.mine_block(&self.store, &tip, txs)?;
        let mut actions = Vec::new();
        trace(
            &mut actions,
            TraceKind::Mined,
            json!({"block": block.hash(), "height": block.height, "payloads": payloads(&block)}),
        );
        self.store.append_block(block.clone(), ctx.now)?;
        self.stats.blocks_accepted += 1;
        if self.relays() {
            for &p in ctx.peers {
                actions.push(NodeAction::Send {
                    to: p,
                    kind: MessageKind::BlockAnnounce(block.clone()),
                });
            }
        }
        Ok(actions)
    }

    pub fn on_receive_block(&mut self, from: NodeId, block: Block, ctx: NodeCtx<'_>) -> Vec<NodeAction> {
        let mut actions = Vec::new();
        let mut queue = VecDeque::from([(from, block)]);
        while let Some((from, block)) = queue.pop_front() {
            let hash = block.hash();
            if self.store.contains(&hash) || self.refused.contains(&hash) || self.orphan_parent.contains_key(&hash) {
                continue;
            }
            if self.refused.contains(&block.prev) {
                self.refused.insert(hash);
                self.stats.blocks_refused += 1;
                trace(
                    &mut actions,
                    TraceKind::BlockRefused,
                    json!({"block": hash, "height": block.height, "from": from, "reason": "refused_parent", "payloads": payloads(&block)}),
                );
                self.drain_children(hash, &mut queue);
                continue;
            }
            if !self.store.contains(&block.prev) {
                trace(
                    &mut actions,
                    TraceKind::OrphanBuffered,
                    json!({"block": hash, "parent": block.prev, "from": from}),
                );
                actions.push(NodeAction::ExpireOrphan {
                    block: hash,
                    at: ctx.now + self.orphan_timeout,
                });
                self.orphan_parent.insert(hash, block.prev);
                self.orphans.entry(block.prev).or_default().push(Orphan { block, from });
                continue;
            }
            self.connect(from, block, ctx, &mut actions);
            self.drain_children(hash, &mut queue);
        }
        actions
    }

    /// Moves orphans waiting on `parent` into the work queue.
    fn drain_children(&mut self, parent: BlockHash, queue: &mut VecDeque<(NodeId, Block)>) {
        if let Some(waiting) = self.orphans.remove(&parent) {
            for o in waiting {
                self.orphan_parent.remove(&o.block.hash());
                queue.push_back((o.from, o.block));
            }
        }
    }

    /// Filter, append, relay and, on reorg, inspect. The parent is stored.
    fn connect(&mut self, from: NodeId, block: Block, ctx: NodeCtx<'_>, actions: &mut Vec<NodeAction>) {
        let hash = block.hash();
        if self.runs_bad() {
            let bound = self.db.total_length() as u64;
            let matcher = self
                .matchers
                .entry(from)
                .or_insert_with(|| MatcherState::new(self.policy.threshold));
            let outcome = filter_block(matcher, &self.db, &block);
            if outcome.max_step_work > self.stats.max_step_work {
                self.stats.max_step_work = outcome.max_step_work;
                self.stats.work_bound_at_max = bound;
            }
            if outcome.max_step_work > bound {
                self.stats.bound_violations += 1;
            }
            for verdict in &outcome.alerts {
                self.stats.alerts += 1;
                trace(
                    actions,
                    TraceKind::Alert,
                    json!({"block": hash, "from": from, "verdict": verdict}),
                );
            }
            if outcome.refuses_block() {
                for &id in &outcome.detected {
                    self.db.record_match(id, ctx.now);
                }
                self.refused.insert(hash);
                self.stats.blocks_refused += 1;
                let rejected: Vec<String> = outcome
                    .rejected
                    .iter()
                    .map(|tx| String::from_utf8_lossy(&tx.payload).into_owned())
                    .collect();
                trace(
                    actions,
                    TraceKind::BlockRefused,
                    json!({
                        "block": hash,
                        "height": block.height,
                        "from": from,
                        "reason": "attack_detected",
                        "detected": outcome.detected,
                        "rejected": rejected,
                        "payloads": payloads(&block),
                    }),
                );
                return;
            }
        }

        let height = block.height;
        let block_payloads = payloads(&block);
        let event = match self.store.append_block(block.clone(), ctx.now) {
            Ok(event) => event,
            Err(err) => {
                self.refused.insert(hash);
                self.stats.blocks_invalid += 1;
                trace(
                    actions,
                    TraceKind::BlockInvalid,
                    json!({"block": hash, "from": from, "error": err.to_string()}),
                );
                return;
            }
        };
        self.stats.blocks_accepted += 1;
        let event_name = match &event {
            ChainEvent::ExtendedTip => "extended_tip",
            ChainEvent::CreatedFork => "created_fork",
            ChainEvent::ExtendedFork => "extended_fork",
            ChainEvent::Reorg { .. } => "reorg",
        };
        trace(
            actions,
            TraceKind::BlockAccepted,
            json!({"block": hash, "height": height, "from": from, "event": event_name, "payloads": block_payloads}),
        );

        match event {
            ChainEvent::ExtendedTip => self.relay(from, std::slice::from_ref(&block), ctx, actions),
            ChainEvent::CreatedFork | ChainEvent::ExtendedFork => {}
            ChainEvent::Reorg {
                old_tip,
                new_tip,
                old_branch,
                new_branch,
            } => {
                self.stats.reorgs += 1;
                // Prefix context from before the switch no longer applies.
                self.matchers.clear();
                trace(
                    actions,
                    TraceKind::Reorg,
                    json!({"old_tip": old_tip, "new_tip": new_tip, "abandoned": old_branch.len(), "adopted": new_branch.len()}),
                );
                let adopted: Vec<Block> = new_branch
                    .iter()
                    .filter_map(|h| self.store.get(h).cloned())
                    .collect();
                self.relay(from, &adopted, ctx, actions);
                let record = self
                    .store
                    .fork_records()
                    .last()
                    .cloned()
                    .expect("a reorg stores a fork record");
                trace(
                    actions,
                    TraceKind::ForkRecorded,
                    json!({
                        "fork_head": record.fork_head,
                        "branch_blocks": record.branch_blocks.len(),
                        "start_time": record.start_time,
                        "suspicious_txs": record.suspicious_txs.len(),
                    }),
                );
                if self.runs_bad() {
                    self.inspect(record, ctx, actions);
                }
            }
        }
    }

    fn relay(&self, from: NodeId, blocks: &[Block], ctx: NodeCtx<'_>, actions: &mut Vec<NodeAction>) {
        if !self.relays() {
            return;
        }
        for &p in ctx.peers.iter().filter(|&&p| p != from) {
            for b in blocks {
                actions.push(NodeAction::Send {
                    to: p,
                    kind: MessageKind::BlockAnnounce(b.clone()),
                });
            }
        }
    }

    /// Pattern inspection of a fresh fork record, then local insertion and
    /// sharing of each accepted candidate.
    fn inspect(&mut self, record: ForkRecord, ctx: NodeCtx<'_>, actions: &mut Vec<NodeAction>) {
        let mainstream = self.store.mainstream_txids();
        for candidate in inspect_fork(&record, &self.db, &mainstream) {
            trace(
                actions,
                TraceKind::Inspection,
                json!({"length": candidate.hashes.len(), "label": candidate.label, "recurrence_of": candidate.recurrence_of}),
            );
            if let Some(id) = candidate.recurrence_of {
                self.db.record_match(id, ctx.now);
            }
            match confirm_threat(&mut self.db, &candidate, &self.policy) {
                Ok(ins) => {
                    self.stats.intel_inserted += 1;
                    self.seen_intel.insert(candidate.digest());
                    trace(
                        actions,
                        TraceKind::IntelInserted,
                        json!({"id": ins.id, "source": "local", "length": candidate.hashes.len(), "evicted": ins.evicted}),
                    );
                    self.share(None, record.clone(), candidate, ctx, actions);
                }
                Err(rej) => trace(
                    actions,
                    TraceKind::IntelDiscarded,
                    json!({"source": "local", "reason": rej.to_string()}),
                ),
            }
        }
    }

    fn share(
        &mut self,
        except: Option<NodeId>,
        record: ForkRecord,
        candidate: Candidate,
        ctx: NodeCtx<'_>,
        actions: &mut Vec<NodeAction>,
    ) {
        if ctx.eclipsed {
            trace(
                actions,
                TraceKind::IntelDeferred,
                json!({"direction": "outgoing", "label": candidate.label}),
            );
            self.deferred_out.push((record, candidate));
            return;
        }
        for &p in ctx.peers.iter().filter(|&&p| Some(p) != except) {
            actions.push(NodeAction::Send {
                to: p,
                kind: MessageKind::ForkIntel {
                    record: record.clone(),
                    candidate: candidate.clone(),
                },
            });
        }
    }

    pub fn on_receive_fork_intel(
        &mut self,
        from: NodeId,
        record: ForkRecord,
        candidate: Candidate,
        ctx: NodeCtx<'_>,
    ) -> Vec<NodeAction> {
        let mut actions = Vec::new();
        if !self.runs_bad() {
            return actions;
        }
        if ctx.eclipsed {
            trace(
                &mut actions,
                TraceKind::IntelDeferred,
                json!({"direction": "incoming", "from": from, "label": candidate.label}),
            );
            self.deferred_in.push((from, record, candidate));
            return actions;
        }
        if !self.seen_intel.insert(candidate.digest()) {
            self.stats.intel_duplicates += 1;
            return actions;
        }
        match confirm_threat(&mut self.db, &candidate, &self.policy) {
            Ok(ins) => {
                self.stats.intel_inserted += 1;
                trace(
                    &mut actions,
                    TraceKind::IntelInserted,
                    json!({"id": ins.id, "source": "gossip", "from": from, "length": candidate.hashes.len(), "evicted": ins.evicted}),
                );
                self.share(Some(from), record, candidate, ctx, &mut actions);
            }
            Err(rej) => trace(
                &mut actions,
                TraceKind::IntelDiscarded,
                json!({"source": "gossip", "from": from, "reason": rej.to_string()}),
            ),
        }
        actions
    }

    pub fn on_get_blocks(&mut self, from: NodeId, locator: &[BlockHash]) -> Vec<NodeAction> {
        if !self.relays() {
            return Vec::new();
        }
        self.store
            .blocks_after_locator(locator, MAX_BLOCKS_PER_REPLY)
            .into_iter()
            .map(|b| NodeAction::Send {
                to: from,
                kind: MessageKind::BlockAnnounce(b),
            })
            .collect()
    }

    pub fn request_blocks(&self, peers: &[NodeId]) -> Vec<NodeAction> {
        let locator = self.store.block_locator();
        peers
            .iter()
            .map(|&p| NodeAction::Send {
                to: p,
                kind: MessageKind::GetBlocks {
                    locator: locator.clone(),
                },
            })
            .collect()
    }

    /// Drops a buffered orphan whose parent never arrived.
    pub fn expire_orphan(&mut self, hash: &BlockHash) -> Vec<NodeAction> {
        let Some(parent) = self.orphan_parent.remove(hash) else { return Vec::new() };
        if let Some(waiting) = self.orphans.get_mut(&parent) {
            waiting.retain(|o| o.block.hash() != *hash);
            if waiting.is_empty() {
                self.orphans.remove(&parent);
            }
        }
        let mut actions = Vec::new();
        trace(
            &mut actions,
            TraceKind::OrphanExpired,
            json!({"block": hash, "parent": parent}),
        );
        actions
    }

    /// Handles intel held back during an eclipse, shares what was found
    /// while eclipsed, and pulls blocks from `sync_peers`.
    pub fn on_eclipse_end(&mut self, sync_peers: &[NodeId], ctx: NodeCtx<'_>) -> Vec<NodeAction> {
        let mut actions = Vec::new();
        for (record, candidate) in std::mem::take(&mut self.deferred_out) {
            self.share(None, record, candidate, ctx, &mut actions);
        }
        for (from, record, candidate) in std::mem::take(&mut self.deferred_in) {
            actions.extend(self.on_receive_fork_intel(from, record, candidate, ctx));
        }
        actions.extend(self.request_blocks(sync_peers));
        actions
    }
}
