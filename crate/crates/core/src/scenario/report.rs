use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::chain::BlockHash;
use crate::metrics::{measured_overhead, OverheadReport, TrafficKind};
use crate::sim::{NodeStats, Role};
use crate::threat::serialize_db;

use super::{AssertionResult, ScenarioError, ScenarioRun};

#[derive(Debug, Clone, Serialize)]
pub struct BytesSent {
    pub block: u64,
    pub fork_intel: u64,
    pub get_blocks: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeReport {
    pub name: String,
    pub role: Role,
    pub bad_enabled: bool,
    pub tip: BlockHash,
    pub height: u64,
    pub fork_records: usize,
    pub db_sequences: usize,
    pub db_total_length: usize,
    pub stats: NodeStats,
    pub bytes_sent: BytesSent,
    /// Share of this node's sent bytes that were fork intel.
    pub measured_overhead: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub until: u64,
    pub passed: bool,
    pub assertions: Vec<AssertionResult>,
    pub overhead: Option<OverheadReport>,
    pub nodes: Vec<NodeReport>,
}

impl ScenarioRun {
    pub fn report(&self) -> ScenarioReport {
        let sim = &self.sim;
        let horizon = self.scenario.until + 1;
        let nodes = sim
            .nodes()
            .iter()
            .map(|n| {
                let store = n.store();
                let sent = |k| sim.ledger().sent_bytes(n.id(), k);
                NodeReport {
                    name: n.name().to_owned(),
                    role: n.role(),
                    bad_enabled: n.bad_enabled(),
                    tip: store.tip(),
                    height: store.tip_height(),
                    fork_records: store.fork_records().len(),
                    db_sequences: n.db().len(),
                    db_total_length: n.db().total_length(),
                    stats: n.stats().clone(),
                    bytes_sent: BytesSent {
                        block: sent(TrafficKind::Block),
                        fork_intel: sent(TrafficKind::ForkIntel),
                        get_blocks: sent(TrafficKind::GetBlocks),
                    },
                    measured_overhead: measured_overhead(sim.ledger(), n.id(), horizon),
                }
            })
            .collect();
        let o = self.scenario.overhead;
        ScenarioReport {
            name: self.scenario.name.clone(),
            seed: self.scenario.sim.seed,
            until: self.scenario.until,
            passed: self.passed(),
            assertions: self.results.clone(),
            overhead: OverheadReport::compute(o.n_orphans, o.max_block_mb, o.out_degree, o.monthly_gb).ok(),
            nodes,
        }
    }

    pub fn summary(&self) -> String {
        let report = self.report();
        let mut s = String::new();
        let _ = writeln!(
            s,
            "scenario {} (seed {}, until {}): {}",
            report.name,
            report.seed,
            report.until,
            if report.passed { "PASS" } else { "FAIL" }
        );
        let _ = writeln!(
            s,
            "{:<8} {:<8} {:>6} {:>5} {:>4} {:>6} {:>7} {:>8}",
            "node", "role", "height", "forks", "k", "alerts", "refused", "intel_B"
        );
        for n in &report.nodes {
            let _ = writeln!(
                s,
                "{:<8} {:<8} {:>6} {:>5} {:>4} {:>6} {:>7} {:>8}",
                n.name,
                format!("{:?}", n.role).to_lowercase(),
                n.height,
                n.fork_records,
                n.db_sequences,
                n.stats.alerts,
                n.stats.blocks_refused,
                n.bytes_sent.fork_intel
            );
        }
        for r in &report.assertions {
            let _ = writeln!(
                s,
                "[{}] {} :: {}",
                if r.passed { "ok" } else { "FAILED" },
                serde_json::to_string(&r.assertion).unwrap_or_default(),
                r.detail
            );
        }
        if let Some(o) = &report.overhead {
            let _ = writeln!(
                s,
                "analytic overhead: {:.4} GB/year over {} GB/month = {:.5}",
                o.bad_broadcast_gb_per_year, o.monthly_bandwidth_gb, o.overhead_fraction
            );
        }
        s
    }

    /// Writes trace.jsonl, bandwidth.jsonl, report.json, overhead.json,
    /// summary.txt and one threat database file per BAD node under `db/`.
    pub fn write_outputs(&self, dir: &Path) -> Result<(), ScenarioError> {
        let io = |path: &Path, source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        };
        let write = |name: &str, bytes: &[u8]| {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| io(&path, e))
        };
        let db_dir = dir.join("db");
        std::fs::create_dir_all(&db_dir).map_err(|e| io(&db_dir, e))?;

        let report = self.report();
        write("trace.jsonl", self.sim.trace().to_jsonl().as_bytes())?;
        write("bandwidth.jsonl", self.sim.ledger().to_jsonl().as_bytes())?;
        write("report.json", pretty(&report).as_bytes())?;
        write("overhead.json", pretty(&report.overhead).as_bytes())?;
        write("summary.txt", self.summary().as_bytes())?;
        for n in self.sim.nodes().iter().filter(|n| n.bad_enabled()) {
            write(&format!("db/{}.badt", n.name()), &serialize_db(n.db()))?;
        }
        Ok(())
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}
