use std::collections::{BTreeSet, VecDeque};

use rand::seq::index::sample;
use rand::Rng;

use super::config::{NodeId, Role, SimConfig, SimError};

pub const MAX_TOPOLOGY_ATTEMPTS: usize = 100;

/// Directed peer graph. Messages flow both ways over an edge; direction only
/// records which side opened the connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    out: Vec<BTreeSet<NodeId>>,
    inc: Vec<BTreeSet<NodeId>>,
}

impl Topology {
    pub fn empty(n: usize) -> Self {
        Self {
            out: vec![BTreeSet::new(); n],
            inc: vec![BTreeSet::new(); n],
        }
    }

    pub fn node_count(&self) -> usize {
        self.out.len()
    }

    pub fn out_peers(&self, n: NodeId) -> &BTreeSet<NodeId> {
        &self.out[n.index()]
    }

    /// Outgoing and incoming peers.
    pub fn neighbors(&self, n: NodeId) -> BTreeSet<NodeId> {
        self.out[n.index()].union(&self.inc[n.index()]).copied().collect()
    }

    pub fn add_edge(&mut self, from: NodeId, to: NodeId) -> bool {
        if from == to || !self.out[from.index()].insert(to) {
            return false;
        }
        self.inc[to.index()].insert(from);
        true
    }

    /// Removes the edge in both directions.
    pub fn remove_link(&mut self, a: NodeId, b: NodeId) -> bool {
        let x = self.out[a.index()].remove(&b);
        let y = self.out[b.index()].remove(&a);
        self.inc[b.index()].remove(&a);
        self.inc[a.index()].remove(&b);
        x || y
    }

    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(i, peers)| peers.iter().map(move |&p| (NodeId(i as u32), p)))
            .collect()
    }

    /// Undirected BFS distances from `src` inside `members`.
    fn distances(&self, src: NodeId, members: &BTreeSet<NodeId>) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.out.len()];
        dist[src.index()] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u.index()].unwrap_or(0);
            for v in self.neighbors(u) {
                if members.contains(&v) && dist[v.index()].is_none() {
                    dist[v.index()] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Whether `members` form one component when edges are undirected.
    pub fn is_connected(&self, members: &BTreeSet<NodeId>) -> bool {
        let Some(&first) = members.iter().next() else { return true };
        let dist = self.distances(first, members);
        members.iter().all(|m| dist[m.index()].is_some())
    }

    /// Largest undirected hop distance within `members`, `None` if they are
    /// disconnected.
    pub fn diameter(&self, members: &BTreeSet<NodeId>) -> Option<usize> {
        let mut best = 0;
        for &m in members {
            let dist = self.distances(m, members);
            for other in members {
                best = best.max(dist[other.index()]?);
            }
        }
        Some(best)
    }
}

pub fn honest_nodes(config: &SimConfig) -> BTreeSet<NodeId> {
    config
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.role != Role::Attacker)
        .map(|(i, _)| NodeId(i as u32))
        .collect()
}

/// Samples `out_degree` distinct honest targets per honest node, then adds
/// the configured links. Random graphs are resampled until the honest
/// subgraph is connected. Explicit-only topologies are used as given.
pub fn build_topology<R: Rng>(config: &SimConfig, rng: &mut R) -> Result<Topology, SimError> {
    let n = config.nodes.len();
    let honest: Vec<NodeId> = honest_nodes(config).into_iter().collect();
    let members: BTreeSet<NodeId> = honest.iter().copied().collect();
    let attempts = if config.random_topology { MAX_TOPOLOGY_ATTEMPTS } else { 1 };

    for _ in 0..attempts {
        let mut topo = Topology::empty(n);
        if config.random_topology && honest.len() > 1 {
            for (pos, &u) in honest.iter().enumerate() {
                // Sample among the other honest nodes, skipping `u` itself.
                for k in sample(rng, honest.len() - 1, config.out_degree) {
                    let target = honest[if k >= pos { k + 1 } else { k }];
                    topo.add_edge(u, target);
                }
            }
        }
        for &(a, b) in &config.links {
            topo.add_edge(a, b);
        }
        if !config.random_topology || topo.is_connected(&members) {
            return Ok(topo);
        }
    }
    Err(SimError::Unconnectable(MAX_TOPOLOGY_ATTEMPTS))
}
