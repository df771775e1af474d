use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{GenesisConfig, Transaction, TxHash};
use crate::threat::ThreatPolicy;

/// Index of a node in [`SimConfig::nodes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Full validation, relays, runs BAD when enabled.
    Full,
    /// Headers-only validation: no UTXO set, spends are not checked.
    Light,
    /// Keeps a chain for mining but never filters, relays or shares intel.
    Attacker,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub name: String,
    pub role: Role,
    pub bad_enabled: bool,
}

impl NodeSpec {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        Self {
            name: name.into(),
            role,
            bad_enabled: role != Role::Attacker,
        }
    }
}

/// Uniform latency range in ticks, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyRange {
    pub min: u64,
    pub max: u64,
}

impl Default for LatencyRange {
    fn default() -> Self {
        Self { min: 1, max: 60 }
    }
}

pub const MAX_LATENCY: u64 = 600;

/// During `[start, end)` the victim talks only to `controlled_peers`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EclipseWindow {
    pub victim: NodeId,
    pub controlled_peers: Vec<NodeId>,
    pub start: u64,
    pub end: u64,
}

impl EclipseWindow {
    pub fn contains(&self, t: u64) -> bool {
        self.start <= t && t < self.end
    }
}

/// Timed actions executed by the event loop.
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptAction {
    /// `node` mines one block on its tip holding `txs`.
    Mine { at: u64, node: NodeId, txs: Vec<Transaction> },
    Eclipse(EclipseWindow),
    /// The attacker mines one block per entry of `blocks` on the deepest
    /// block of the victim's mainstream chain it also holds (or on its
    /// previous injection during the current window) and sends them to the
    /// victim. `forge` skips validation.
    Inject {
        at: u64,
        attacker: NodeId,
        victim: NodeId,
        blocks: Vec<Vec<Transaction>>,
        forge: bool,
    },
    /// Records the node's tip and how many of its newest mainstream blocks
    /// were injected.
    Probe { at: u64, node: NodeId },
    /// Adds or removes the undirected link `a`–`b`. A new link triggers a
    /// get-blocks exchange.
    Link { at: u64, a: NodeId, b: NodeId, connect: bool },
}

impl ScriptAction {
    pub fn at(&self) -> u64 {
        match self {
            ScriptAction::Mine { at, .. }
            | ScriptAction::Inject { at, .. }
            | ScriptAction::Probe { at, .. }
            | ScriptAction::Link { at, .. } => *at,
            ScriptAction::Eclipse(w) => w.start,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    pub nodes: Vec<NodeSpec>,
    /// Outgoing edges sampled per non-attacker node when `random_topology`.
    pub out_degree: usize,
    pub random_topology: bool,
    /// Extra directed edges, added after sampling.
    pub links: Vec<(NodeId, NodeId)>,
    pub latency: LatencyRange,
    /// Ticks an out-of-order block waits for its parent.
    pub orphan_timeout: u64,
    /// Chance each scheduled eclipse takes effect.
    pub eclipse_success_prob: f64,
    pub policy: ThreatPolicy,
    pub db_capacity: usize,
    pub genesis: GenesisConfig,
    /// Blocks every node holds at tick 0.
    pub initial_chain_length: u64,
    /// Sequences every BAD-enabled node starts with.
    pub preload_db: Vec<(Vec<TxHash>, String)>,
    pub script: Vec<ScriptAction>,
}

impl SimConfig {
    /// `n` BAD-enabled full nodes on a random graph, no script.
    pub fn honest(seed: u64, n: usize, out_degree: usize) -> Self {
        Self {
            seed,
            nodes: (0..n).map(|i| NodeSpec::new(format!("n{i}"), Role::Full)).collect(),
            out_degree,
            random_topology: true,
            links: Vec::new(),
            latency: LatencyRange::default(),
            orphan_timeout: 600,
            eclipse_success_prob: 1.0,
            policy: ThreatPolicy::default(),
            db_capacity: crate::threat::DEFAULT_CAPACITY,
            genesis: GenesisConfig::default(),
            initial_chain_length: 0,
            preload_db: Vec::new(),
            script: Vec::new(),
        }
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes
            .iter()
            .position(|n| n.name == name)
            .map(|i| NodeId(i as u32))
    }

    fn check_node(&self, id: NodeId) -> Result<(), SimError> {
        if id.index() < self.nodes.len() {
            Ok(())
        } else {
            Err(SimError::UnknownNode(id))
        }
    }

    fn role(&self, id: NodeId) -> Role {
        self.nodes[id.index()].role
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.nodes.is_empty() {
            return invalid("no nodes".into());
        }
        if self.nodes.len() > u32::MAX as usize {
            return invalid("too many nodes".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.role == Role::Attacker && n.bad_enabled {
                return invalid(format!("attacker {} cannot run BAD", n.name));
            }
            if self.nodes[..i].iter().any(|m| m.name == n.name) {
                return invalid(format!("duplicate node name {}", n.name));
            }
        }
        let honest = self.nodes.iter().filter(|n| n.role != Role::Attacker).count();
        if self.random_topology && honest > 1 && self.out_degree >= honest {
            return invalid(format!(
                "out_degree {} must be below the {honest} honest nodes",
                self.out_degree
            ));
        }
        if self.latency.min > self.latency.max || self.latency.max > MAX_LATENCY {
            return invalid(format!(
                "latency range {}..{} outside 0..{MAX_LATENCY}",
                self.latency.min, self.latency.max
            ));
        }
        if !(0.0..=1.0).contains(&self.eclipse_success_prob) {
            return invalid("eclipse_success_prob outside [0, 1]".into());
        }
        for &(a, b) in &self.links {
            self.check_node(a)?;
            self.check_node(b)?;
            if a == b {
                return invalid(format!("self-loop on node {a}"));
            }
        }

        let mut windows: Vec<&EclipseWindow> = Vec::new();
        for action in &self.script {
            match action {
                ScriptAction::Mine { node, .. } | ScriptAction::Probe { node, .. } => self.check_node(*node)?,
                ScriptAction::Link { a, b, .. } => {
                    self.check_node(*a)?;
                    self.check_node(*b)?;
                    if a == b {
                        return invalid(format!("self-loop on node {a}"));
                    }
                }
                ScriptAction::Inject { attacker, victim, .. } => {
                    self.check_node(*attacker)?;
                    self.check_node(*victim)?;
                    if self.role(*attacker) != Role::Attacker {
                        return Err(SimError::NotAnAttacker(*attacker));
                    }
                }
                ScriptAction::Eclipse(w) => {
                    self.check_node(w.victim)?;
                    if w.start >= w.end {
                        return invalid(format!("eclipse window {}..{} is empty", w.start, w.end));
                    }
                    for &p in &w.controlled_peers {
                        self.check_node(p)?;
                        if self.role(p) != Role::Attacker {
                            return Err(SimError::NotAnAttacker(p));
                        }
                    }
                    if windows
                        .iter()
                        .any(|o| o.victim == w.victim && o.start < w.end && w.start < o.end)
                    {
                        return Err(SimError::OverlappingWindow(w.victim));
                    }
                    windows.push(w);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not an attacker")]
    NotAnAttacker(NodeId),
    #[error("overlapping eclipse windows for node {0}")]
    OverlappingWindow(NodeId),
    #[error("honest subgraph still disconnected after {0} samples")]
    Unconnectable(usize),
}
