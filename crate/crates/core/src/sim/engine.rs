use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::chain::{Block, BlockHash, EnhancedChainStore, Miner, Transaction, ValidationMode};
use crate::metrics::{BandwidthLedger, DeliveryStatus, LedgerEntry};

use super::config::{EclipseWindow, NodeId, Role, ScriptAction, SimConfig, SimError};
use super::message::{Message, MessageKind};
use super::node::{payloads, Node, NodeAction, NodeCtx};
use super::topology::{build_topology, honest_nodes, Topology};
use super::trace::{TraceEvent, TraceKind, TraceLog};

#[derive(Debug, Clone)]
enum Event {
    Deliver(Message),
    Script(ScriptAction),
    EclipseEnd(usize),
    ExpireOrphan { node: NodeId, block: BlockHash },
}

#[derive(Debug, Clone)]
struct Queued {
    time: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Where an attacker's injected branch for a victim currently ends.
#[derive(Debug, Clone, Copy)]
struct AttackTip {
    hash: BlockHash,
    height: u64,
}

/// Single-threaded discrete-event simulation. Events fire in (time,
/// insertion order); all randomness comes from one seeded generator, so the
/// trace is a function of the configuration.
#[derive(Debug)]
pub struct Simulation {
    config: SimConfig,
    rng: ChaCha8Rng,
    now: u64,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Queued>>,
    nodes: Vec<Node>,
    topology: Topology,
    windows: Vec<EclipseWindow>,
    /// Victim → index into `windows` of its running eclipse.
    active: BTreeMap<NodeId, usize>,
    /// Latest scheduled delivery per directed link, keeping links FIFO.
    link_clock: HashMap<(NodeId, NodeId), u64>,
    ledger: BandwidthLedger,
    trace: TraceLog,
    injected: HashSet<BlockHash>,
    attack_tips: BTreeMap<(NodeId, NodeId), AttackTip>,
    last_block_delivery: u64,
}

/// The first `n` blocks every node starts from.
pub fn bootstrap_chain(genesis: &Block, n: u64) -> Vec<Block> {
    let mut store = EnhancedChainStore::with_genesis_block(genesis.clone(), 0, ValidationMode::Full);
    let mut miner = Miner::new("bootstrap");
    let mut out = Vec::new();
    for _ in 0..n {
        let tip = store.tip();
        let block = miner.mine_block(&store, &tip, Vec::new()).expect("empty block is valid");
        store.append_block(block.clone(), 0).expect("extends tip");
        out.push(block);
    }
    out
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let topology = build_topology(&config, &mut rng)?;
        let genesis = config.genesis.block();
        let bootstrap = bootstrap_chain(&genesis, config.initial_chain_length);

        let mut nodes = Vec::with_capacity(config.nodes.len());
        for (i, spec) in config.nodes.iter().enumerate() {
            let mut node = Node::new(
                NodeId(i as u32),
                spec.clone(),
                genesis.clone(),
                config.policy.clone(),
                config.db_capacity,
                config.orphan_timeout,
            );
            for b in &bootstrap {
                node.preload(b.clone()).expect("bootstrap chain is valid");
            }
            if node.bad_enabled() {
                for (hashes, label) in &config.preload_db {
                    node.db_mut().insert(hashes.clone(), label.clone(), 0);
                }
            }
            nodes.push(node);
        }

        let mut sim = Self {
            rng,
            now: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            nodes,
            topology,
            windows: Vec::new(),
            active: BTreeMap::new(),
            link_clock: HashMap::new(),
            ledger: BandwidthLedger::new(),
            trace: TraceLog::default(),
            injected: HashSet::new(),
            attack_tips: BTreeMap::new(),
            last_block_delivery: 0,
            config,
        };
        let script = sim.config.script.clone();
        for action in script {
            sim.push(action.at(), Event::Script(action));
        }
        Ok(sim)
    }

    fn push(&mut self, time: u64, event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued { time, seq, event }));
    }

    /// Adds an action after construction. Eclipse windows are checked
    /// against those already scheduled.
    pub fn schedule(&mut self, action: ScriptAction) -> Result<(), SimError> {
        let mut probe = self.config.clone();
        probe.script.push(action.clone());
        probe.validate()?;
        self.config.script.push(action.clone());
        self.push(action.at().max(self.now), Event::Script(action));
        Ok(())
    }

    pub fn eclipse(&mut self, window: EclipseWindow) -> Result<(), SimError> {
        self.schedule(ScriptAction::Eclipse(window))
    }

    /// Puts a message on the wire at `at` with no latency; it still queues
    /// behind earlier traffic on the same link.
    pub fn send_at(&mut self, at: u64, from: NodeId, to: NodeId, kind: MessageKind) {
        let at = at.max(self.now);
        let deliver = at.max(self.link_clock.get(&(from, to)).copied().unwrap_or(0));
        self.link_clock.insert((from, to), deliver);
        self.ledger.record_sent(from, to);
        self.push(deliver, Event::Deliver(Message::new(from, to, kind, at)));
    }

    /// Processes every event due at or before `until`.
    pub fn run(&mut self, until: u64) -> &TraceLog {
        while let Some(Reverse(next)) = self.queue.peek() {
            if next.time > until {
                break;
            }
            let Reverse(q) = self.queue.pop().expect("peeked");
            self.now = q.time;
            self.dispatch(q.event);
        }
        self.now = self.now.max(until);
        &self.trace
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn trace(&self) -> &TraceLog {
        &self.trace
    }

    pub fn ledger(&self) -> &BandwidthLedger {
        &self.ledger
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn node_by_name(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name() == name)
    }

    pub fn honest_ids(&self) -> BTreeSet<NodeId> {
        honest_nodes(&self.config)
    }

    pub fn is_eclipsed(&self, id: NodeId) -> bool {
        self.active.contains_key(&id)
    }

    pub fn injected_blocks(&self) -> &HashSet<BlockHash> {
        &self.injected
    }

    /// Tick of the most recent block delivery.
    pub fn last_block_delivery(&self) -> u64 {
        self.last_block_delivery
    }

    pub fn honest_tips(&self) -> BTreeMap<NodeId, BlockHash> {
        self.honest_ids()
            .into_iter()
            .map(|id| (id, self.node(id).store().tip()))
            .collect()
    }

    pub fn tips_agree(&self) -> bool {
        let tips = self.honest_tips();
        let mut it = tips.values();
        let first = it.next();
        it.all(|t| Some(t) == first)
    }

    /// Consecutive injected blocks at the top of the node's mainstream chain.
    pub fn injected_depth(&self, id: NodeId) -> usize {
        self.node(id)
            .store()
            .main_chain()
            .iter()
            .rev()
            .take_while(|h| self.injected.contains(h))
            .count()
    }

    fn peers_of(&self, id: NodeId) -> Vec<NodeId> {
        match self.active.get(&id) {
            Some(&w) => self.windows[w].controlled_peers.clone(),
            None => self.topology.neighbors(id).into_iter().collect(),
        }
    }

    /// Whether traffic between `a` and `b` is cut by a running eclipse.
    fn cut(&self, a: NodeId, b: NodeId) -> bool {
        let blocked = |victim: NodeId, other: NodeId| {
            self.active
                .get(&victim)
                .is_some_and(|&w| !self.windows[w].controlled_peers.contains(&other))
        };
        blocked(a, b) || blocked(b, a)
    }

    fn record(&mut self, node: NodeId, kind: TraceKind, detail: Value) {
        self.trace.push(TraceEvent {
            tick: self.now,
            node,
            kind,
            detail,
        });
    }

    fn send(&mut self, from: NodeId, to: NodeId, kind: MessageKind) {
        let latency = self.rng.gen_range(self.config.latency.min..=self.config.latency.max);
        let earliest = self.now + latency;
        let deliver = earliest.max(self.link_clock.get(&(from, to)).copied().unwrap_or(0));
        self.link_clock.insert((from, to), deliver);
        self.ledger.record_sent(from, to);
        let msg = Message::new(from, to, kind, self.now);
        self.push(deliver, Event::Deliver(msg));
    }

    fn apply(&mut self, node: NodeId, actions: Vec<NodeAction>) {
        for action in actions {
            match action {
                NodeAction::Send { to, kind } => self.send(node, to, kind),
                NodeAction::Trace { kind, detail } => self.record(node, kind, detail),
                NodeAction::ExpireOrphan { block, at } => self.push(at, Event::ExpireOrphan { node, block }),
            }
        }
    }

    /// Runs `f` on node `id` with its current view of the network.
    fn with_node<F>(&mut self, id: NodeId, f: F)
    where
        F: FnOnce(&mut Node, NodeCtx<'_>) -> Vec<NodeAction>,
    {
        let peers = self.peers_of(id);
        let ctx = NodeCtx {
            now: self.now,
            peers: &peers,
            eclipsed: self.is_eclipsed(id),
        };
        let actions = f(&mut self.nodes[id.index()], ctx);
        self.apply(id, actions);
    }

    fn dispatch(&mut self, event: Event) {
        match event {
            Event::Deliver(msg) => self.deliver(msg),
            Event::Script(action) => self.script(action),
            Event::EclipseEnd(w) => self.end_eclipse(w),
            Event::ExpireOrphan { node, block } => {
                let actions = self.nodes[node.index()].expire_orphan(&block);
                self.apply(node, actions);
            }
        }
    }

    fn deliver(&mut self, msg: Message) {
        let status = if self.cut(msg.from, msg.to) {
            DeliveryStatus::Suppressed
        } else {
            DeliveryStatus::Delivered
        };
        self.ledger.record(LedgerEntry {
            tick: msg.sent_at,
            from: msg.from,
            to: msg.to,
            kind: msg.kind.traffic(),
            bytes: msg.size_bytes,
            status,
        });
        if status == DeliveryStatus::Suppressed {
            return;
        }
        let from = msg.from;
        match msg.kind {
            MessageKind::BlockAnnounce(block) => {
                self.last_block_delivery = self.now;
                self.with_node(msg.to, |n, ctx| n.on_receive_block(from, block, ctx));
            }
            MessageKind::ForkIntel { record, candidate } => {
                self.with_node(msg.to, |n, ctx| n.on_receive_fork_intel(from, record, candidate, ctx));
            }
            MessageKind::GetBlocks { locator } => {
                self.with_node(msg.to, |n, _| n.on_get_blocks(from, &locator));
            }
        }
    }

    fn script(&mut self, action: ScriptAction) {
        match action {
            ScriptAction::Mine { node, txs, .. } => {
                let mut failure = None;
                self.with_node(node, |n, ctx| {
                    n.mine(txs, ctx).unwrap_or_else(|e| {
                        failure = Some(e.to_string());
                        Vec::new()
                    })
                });
                if let Some(error) = failure {
                    self.record(node, TraceKind::InjectFailed, json!({"action": "mine", "error": error}));
                }
            }
            ScriptAction::Eclipse(window) => self.start_eclipse(window),
            ScriptAction::Inject {
                attacker,
                victim,
                blocks,
                forge,
                ..
            } => self.inject(attacker, victim, blocks, forge),
            ScriptAction::Probe { node, .. } => {
                let store = self.node(node).store();
                let detail = json!({
                    "tip": store.tip(),
                    "height": store.tip_height(),
                    "injected_depth": self.injected_depth(node),
                    "eclipsed": self.is_eclipsed(node),
                });
                self.record(node, TraceKind::Probe, detail);
            }
            ScriptAction::Link { a, b, connect, .. } => {
                let changed = if connect {
                    self.topology.add_edge(a, b)
                } else {
                    self.topology.remove_link(a, b)
                };
                self.record(a, TraceKind::LinkChanged, json!({"peer": b, "connect": connect, "changed": changed}));
                if connect && changed {
                    let to_b = self.node(a).request_blocks(&[b]);
                    self.apply(a, to_b);
                    let to_a = self.node(b).request_blocks(&[a]);
                    self.apply(b, to_a);
                }
            }
        }
    }

    fn start_eclipse(&mut self, window: EclipseWindow) {
        let victim = window.victim;
        let p = self.config.eclipse_success_prob;
        if p < 1.0 && !self.rng.gen_bool(p) {
            self.record(victim, TraceKind::EclipseFailed, json!({"start": window.start, "end": window.end}));
            return;
        }
        self.record(
            victim,
            TraceKind::EclipseStart,
            json!({"controlled": window.controlled_peers, "end": window.end}),
        );
        self.attack_tips.retain(|&(_, v), _| v != victim);
        let end = window.end;
        self.windows.push(window);
        self.active.insert(victim, self.windows.len() - 1);
        self.push(end, Event::EclipseEnd(self.windows.len() - 1));
    }

    fn end_eclipse(&mut self, w: usize) {
        let victim = self.windows[w].victim;
        self.active.remove(&victim);
        self.record(victim, TraceKind::EclipseEnd, json!({"start": self.windows[w].start}));
        let controlled = self.windows[w].controlled_peers.clone();
        let sync: Vec<NodeId> = self
            .topology
            .neighbors(victim)
            .into_iter()
            .filter(|p| !controlled.contains(p) && self.config.nodes[p.index()].role != Role::Attacker)
            .collect();
        self.with_node(victim, |n, ctx| n.on_eclipse_end(&sync, ctx));
    }

    /// Deepest block of the victim's mainstream chain the attacker holds.
    fn attach_point(&self, attacker: NodeId, victim: NodeId) -> AttackTip {
        let a = self.node(attacker).store();
        let v = self.node(victim).store();
        let hash = v
            .main_chain()
            .iter()
            .rev()
            .find(|h| a.contains(h))
            .copied()
            .unwrap_or_else(|| v.genesis());
        let height = a.get(&hash).map_or(0, |b| b.height);
        AttackTip { hash, height }
    }

    fn inject(&mut self, attacker: NodeId, victim: NodeId, blocks: Vec<Vec<Transaction>>, forge: bool) {
        let mut tip = match self.attack_tips.get(&(attacker, victim)) {
            Some(t) => *t,
            None => self.attach_point(attacker, victim),
        };
        for txs in blocks {
            let now = self.now;
            let built = self.nodes[attacker.index()].build_block(tip.hash, tip.height + 1, txs, forge, now);
            let block = match built {
                Ok(b) => b,
                Err(e) => {
                    self.record(
                        attacker,
                        TraceKind::InjectFailed,
                        json!({"victim": victim, "parent": tip.hash, "error": e.to_string()}),
                    );
                    break;
                }
            };
            let hash = block.hash();
            let payloads = payloads(&block);
            self.record(
                attacker,
                TraceKind::Injected,
                json!({"victim": victim, "block": hash, "height": block.height, "forged": forge, "payloads": payloads}),
            );
            self.injected.insert(hash);
            tip = AttackTip {
                hash,
                height: block.height,
            };
            self.send(attacker, victim, MessageKind::BlockAnnounce(block));
        }
        self.attack_tips.insert((attacker, victim), tip);
    }
}
