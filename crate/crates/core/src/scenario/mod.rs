//! Declarative scenario files.
//!
//! A scenario is a TOML document with `version = 1` naming the nodes, their
//! links, the labelled payload transactions, a timed script and the
//! outcomes to check. See `scenarios/` for complete examples.

mod assertions;
mod report;

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::chain::{GenesisConfig, Transaction, TxHash};
use crate::threat::{ThreatPolicy, ThresholdRule, DEFAULT_CAPACITY};
use crate::sim::{
    EclipseWindow, LatencyRange, NodeId, NodeSpec, Role, ScriptAction, SimConfig, SimError, Simulation,
};

pub use assertions::{Assertion, AssertionResult};
pub use report::{NodeReport, ScenarioReport};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// `"full"`, `"early"` or a fixed prefix length.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ThresholdSpec {
    Named(String),
    Count(usize),
}

impl ThresholdSpec {
    fn rule(&self) -> Result<ThresholdRule, ScenarioError> {
        match self {
            ThresholdSpec::Named(s) if s == "full" => Ok(ThresholdRule::Full),
            ThresholdSpec::Named(s) if s == "early" => Ok(ThresholdRule::Early),
            ThresholdSpec::Named(s) => Err(ScenarioError::Invalid(format!("unknown threshold {s:?}"))),
            ThresholdSpec::Count(0) => Err(ScenarioError::Invalid("threshold must be at least 1".into())),
            ThresholdSpec::Count(n) => Ok(ThresholdRule::AtMost(*n)),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatencySpec {
    min: u64,
    max: u64,
}

/// Inputs of the analytic overhead model.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverheadInputs {
    pub n_orphans: f64,
    pub max_block_mb: f64,
    pub out_degree: f64,
    pub monthly_gb: f64,
}

impl Default for OverheadInputs {
    fn default() -> Self {
        Self {
            n_orphans: 141.0,
            max_block_mb: 0.993201,
            out_degree: 32.0,
            monthly_gb: 150.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    name: String,
    role: Role,
    bad: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkEntry {
    from: String,
    to: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PayloadEntry {
    tag: String,
    /// Genesis funding output the transaction spends.
    funding: u32,
    recipient: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedSequence {
    label: String,
    payloads: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
enum ScriptEntry {
    Mine {
        node: String,
        at: u64,
        #[serde(default)]
        every: u64,
        #[serde(default = "one")]
        count: u64,
        /// Payload tags of the first blocks, one list per block.
        #[serde(default)]
        blocks: Vec<Vec<String>>,
    },
    Eclipse {
        victim: String,
        controlled: Vec<String>,
        start: u64,
        end: u64,
    },
    Inject {
        at: u64,
        attacker: String,
        victim: String,
        blocks: Vec<Vec<String>>,
        #[serde(default)]
        forge: bool,
    },
    Probe {
        at: u64,
        node: String,
    },
    Link {
        at: u64,
        a: String,
        b: String,
        connect: bool,
    },
}

fn one() -> u64 {
    1
}

impl ScriptEntry {
    fn first_tick(&self) -> u64 {
        match self {
            ScriptEntry::Mine { at, .. }
            | ScriptEntry::Inject { at, .. }
            | ScriptEntry::Probe { at, .. }
            | ScriptEntry::Link { at, .. } => *at,
            ScriptEntry::Eclipse { start, .. } => *start,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    version: u32,
    name: String,
    seed: u64,
    until: u64,
    #[serde(default)]
    initial_chain_length: u64,
    funding_outputs: Option<u32>,
    threshold: Option<ThresholdSpec>,
    orphan_timeout: Option<u64>,
    eclipse_success_prob: Option<f64>,
    out_degree: Option<usize>,
    random_topology: Option<bool>,
    db_capacity: Option<usize>,
    latency: Option<LatencySpec>,
    #[serde(default)]
    overhead: OverheadInputs,
    nodes: Vec<NodeEntry>,
    #[serde(default)]
    links: Vec<LinkEntry>,
    #[serde(default)]
    payloads: Vec<PayloadEntry>,
    #[serde(default)]
    threat_db: Vec<SeedSequence>,
    #[serde(default)]
    script: Vec<ScriptEntry>,
    #[serde(default)]
    assertions: Vec<Assertion>,
}

/// A parsed and validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub until: u64,
    pub sim: SimConfig,
    pub overhead: OverheadInputs,
    pub assertions: Vec<Assertion>,
    /// Payload tag → transaction.
    pub payloads: BTreeMap<String, Transaction>,
}

struct Resolver<'a> {
    names: BTreeMap<&'a str, NodeId>,
    payloads: &'a BTreeMap<String, Transaction>,
}

impl Resolver<'_> {
    fn node(&self, name: &str) -> Result<NodeId, ScenarioError> {
        self.names
            .get(name)
            .copied()
            .ok_or_else(|| ScenarioError::Invalid(format!("unknown node {name:?}")))
    }

    fn tx(&self, tag: &str) -> Result<Transaction, ScenarioError> {
        self.payloads
            .get(tag)
            .cloned()
            .ok_or_else(|| ScenarioError::Invalid(format!("unknown payload tag {tag:?}")))
    }

    fn txs(&self, tags: &[String]) -> Result<Vec<Transaction>, ScenarioError> {
        tags.iter().map(|t| self.tx(t)).collect()
    }
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Self::build(file)
    }

    fn build(file: ScenarioFile) -> Result<Self, ScenarioError> {
        let invalid = |m: String| ScenarioError::Invalid(m);
        if file.version != SCENARIO_VERSION {
            return Err(invalid(format!(
                "unsupported version {} (expected {SCENARIO_VERSION})",
                file.version
            )));
        }

        let mut genesis = GenesisConfig::default();
        if let Some(n) = file.funding_outputs {
            genesis.funding_outputs = n;
        }
        let mut payloads = BTreeMap::new();
        for p in &file.payloads {
            if p.funding >= genesis.funding_outputs {
                return Err(invalid(format!(
                    "payload {:?} spends funding output {} of {}",
                    p.tag, p.funding, genesis.funding_outputs
                )));
            }
            let recipient = p.recipient.as_deref().unwrap_or("sink");
            let tx = genesis.payload_transaction(p.funding, p.tag.as_bytes(), recipient.as_bytes());
            if payloads.insert(p.tag.clone(), tx).is_some() {
                return Err(invalid(format!("duplicate payload tag {:?}", p.tag)));
            }
        }

        let nodes: Vec<NodeSpec> = file
            .nodes
            .iter()
            .map(|n| NodeSpec {
                name: n.name.clone(),
                role: n.role,
                bad_enabled: n.bad.unwrap_or(n.role != Role::Attacker),
            })
            .collect();
        let resolver = Resolver {
            names: file
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| (n.name.as_str(), NodeId(i as u32)))
                .collect(),
            payloads: &payloads,
        };

        let links = file
            .links
            .iter()
            .map(|l| Ok((resolver.node(&l.from)?, resolver.node(&l.to)?)))
            .collect::<Result<Vec<_>, ScenarioError>>()?;

        let preload_db = file
            .threat_db
            .iter()
            .map(|s| {
                let hashes: Vec<TxHash> = resolver.txs(&s.payloads)?.iter().map(Transaction::hash).collect();
                if hashes.is_empty() {
                    return Err(invalid(format!("threat_db entry {:?} is empty", s.label)));
                }
                Ok((hashes, s.label.clone()))
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;

        if file.script.windows(2).any(|w| w[1].first_tick() < w[0].first_tick()) {
            return Err(invalid("script actions must be in time order".into()));
        }
        let mut script = Vec::new();
        for entry in &file.script {
            match entry {
                ScriptEntry::Mine {
                    node,
                    at,
                    every,
                    count,
                    blocks,
                } => {
                    let node = resolver.node(node)?;
                    if *count > 1 && *every == 0 {
                        return Err(invalid("repeated mine action needs every > 0".into()));
                    }
                    if blocks.len() as u64 > *count {
                        return Err(invalid("more payload blocks than mined blocks".into()));
                    }
                    for i in 0..*count {
                        let txs = match blocks.get(i as usize) {
                            Some(tags) => resolver.txs(tags)?,
                            None => Vec::new(),
                        };
                        script.push(ScriptAction::Mine {
                            at: at + i * every,
                            node,
                            txs,
                        });
                    }
                }
                ScriptEntry::Eclipse {
                    victim,
                    controlled,
                    start,
                    end,
                } => script.push(ScriptAction::Eclipse(EclipseWindow {
                    victim: resolver.node(victim)?,
                    controlled_peers: controlled.iter().map(|c| resolver.node(c)).collect::<Result<_, _>>()?,
                    start: *start,
                    end: *end,
                })),
                ScriptEntry::Inject {
                    at,
                    attacker,
                    victim,
                    blocks,
                    forge,
                } => script.push(ScriptAction::Inject {
                    at: *at,
                    attacker: resolver.node(attacker)?,
                    victim: resolver.node(victim)?,
                    blocks: blocks.iter().map(|b| resolver.txs(b)).collect::<Result<_, _>>()?,
                    forge: *forge,
                }),
                ScriptEntry::Probe { at, node } => script.push(ScriptAction::Probe {
                    at: *at,
                    node: resolver.node(node)?,
                }),
                ScriptEntry::Link { at, a, b, connect } => script.push(ScriptAction::Link {
                    at: *at,
                    a: resolver.node(a)?,
                    b: resolver.node(b)?,
                    connect: *connect,
                }),
            }
        }
        // Repeated mining interleaves with later actions.
        script.sort_by_key(ScriptAction::at);

        for a in &file.assertions {
            a.validate(&|n| resolver.node(n).map(|_| ()), &|t| resolver.tx(t).map(|_| ()))?;
        }

        let policy = ThreatPolicy {
            threshold: match &file.threshold {
                Some(t) => t.rule()?,
                None => ThresholdRule::default(),
            },
            ..ThreatPolicy::default()
        };
        let latency = file.latency.map_or_else(LatencyRange::default, |l| LatencyRange {
            min: l.min,
            max: l.max,
        });
        let sim = SimConfig {
            seed: file.seed,
            nodes,
            out_degree: file.out_degree.unwrap_or(8),
            random_topology: file.random_topology.unwrap_or(file.links.is_empty()),
            links,
            latency,
            orphan_timeout: file.orphan_timeout.unwrap_or(600),
            eclipse_success_prob: file.eclipse_success_prob.unwrap_or(1.0),
            policy,
            db_capacity: file.db_capacity.unwrap_or(DEFAULT_CAPACITY),
            genesis,
            initial_chain_length: file.initial_chain_length,
            preload_db,
            script,
        };
        sim.validate()?;
        if file.overhead.monthly_gb.is_nan() || file.overhead.monthly_gb <= 0.0 {
            return Err(invalid("overhead.monthly_gb must be positive".into()));
        }
        Ok(Self {
            name: file.name,
            until: file.until,
            sim,
            overhead: file.overhead,
            assertions: file.assertions,
            payloads,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sim.seed = seed;
        self
    }

    pub fn tx_hash(&self, tag: &str) -> Option<TxHash> {
        self.payloads.get(tag).map(Transaction::hash)
    }

    /// Runs the simulation to `until` and checks every assertion.
    pub fn run(&self) -> Result<ScenarioRun, ScenarioError> {
        let mut sim = Simulation::new(self.sim.clone())?;
        sim.run(self.until);
        let results = self.assertions.iter().map(|a| a.check(self, &sim)).collect();
        Ok(ScenarioRun {
            scenario: self.clone(),
            sim,
            results,
        })
    }
}

#[derive(Debug)]
pub struct ScenarioRun {
    pub scenario: Scenario,
    pub sim: Simulation,
    pub results: Vec<AssertionResult>,
}

impl ScenarioRun {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    /// 0 when every assertion holds, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}
