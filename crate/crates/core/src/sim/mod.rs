//! Deterministic discrete-event network of BAD nodes and eclipse attackers.

mod config;
mod engine;
mod message;
mod node;
mod topology;
mod trace;

pub use config::{
    EclipseWindow, LatencyRange, NodeId, NodeSpec, Role, ScriptAction, SimConfig, SimError, MAX_LATENCY,
};
pub use engine::{bootstrap_chain, Simulation};
pub use message::{Message, MessageKind};
pub use node::{payloads, Node, NodeAction, NodeCtx, NodeStats, MAX_BLOCKS_PER_REPLY};
pub use topology::{build_topology, honest_nodes, Topology, MAX_TOPOLOGY_ATTEMPTS};
pub use trace::{TraceEvent, TraceKind, TraceLog};
