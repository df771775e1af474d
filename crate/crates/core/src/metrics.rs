//! Bandwidth accounting and the analytic overhead model.
//!
//! The analytic model assumes a node rebroadcasts every orphaned block of a
//! year, at maximum block size, to each of its outgoing peers:
//!
//! ```text
//! annual GB = out_degree × max_block_mb × n_orphans / 1000
//! overhead  = annual GB / (m × 12)        m = GB exchanged per month
//! ```
//! MB→GB uses the decimal factor 1000.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::sim::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrafficKind {
    Block,
    ForkIntel,
    GetBlocks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryStatus {
    Delivered,
    Suppressed,
}

/// One resolved message. `tick` is the send time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerEntry {
    pub tick: u64,
    pub from: NodeId,
    pub to: NodeId,
    pub kind: TrafficKind,
    pub bytes: u64,
    pub status: DeliveryStatus,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LinkCounters {
    pub sent: u64,
    pub delivered: u64,
    pub suppressed: u64,
}

impl LinkCounters {
    pub fn in_flight(&self) -> u64 {
        self.sent - self.delivered - self.suppressed
    }
}

#[derive(Debug, Clone, Default)]
pub struct BandwidthLedger {
    entries: Vec<LedgerEntry>,
    totals: BTreeMap<(NodeId, TrafficKind), u64>,
    links: BTreeMap<(NodeId, NodeId), LinkCounters>,
}

impl BandwidthLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Called when a message enters the network.
    pub fn record_sent(&mut self, from: NodeId, to: NodeId) {
        self.links.entry((from, to)).or_default().sent += 1;
    }

    /// Called when a message is delivered or suppressed.
    pub fn record(&mut self, entry: LedgerEntry) {
        let link = self.links.entry((entry.from, entry.to)).or_default();
        match entry.status {
            DeliveryStatus::Delivered => link.delivered += 1,
            DeliveryStatus::Suppressed => link.suppressed += 1,
        }
        *self.totals.entry((entry.from, entry.kind)).or_default() += entry.bytes;
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Bytes sent per (sender, kind), whatever their fate.
    pub fn totals(&self) -> &BTreeMap<(NodeId, TrafficKind), u64> {
        &self.totals
    }

    pub fn sent_bytes(&self, node: NodeId, kind: TrafficKind) -> u64 {
        self.totals.get(&(node, kind)).copied().unwrap_or(0)
    }

    pub fn links(&self) -> &BTreeMap<(NodeId, NodeId), LinkCounters> {
        &self.links
    }

    pub fn link(&self, from: NodeId, to: NodeId) -> LinkCounters {
        self.links.get(&(from, to)).copied().unwrap_or_default()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("plain data serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("monthly bandwidth must be positive")]
    NonpositiveBandwidth,
}

/// GB per year a node sends when it rebroadcasts every orphaned block.
pub fn annual_fork_broadcast(n_orphans: f64, max_block_mb: f64, out_degree: f64) -> f64 {
    out_degree * max_block_mb * n_orphans / 1000.0
}

/// Fraction of yearly traffic taken by fork broadcast.
pub fn overhead(bad_gb_year: f64, monthly_gb: f64) -> Result<f64, MetricsError> {
    if monthly_gb.is_nan() || monthly_gb <= 0.0 {
        return Err(MetricsError::NonpositiveBandwidth);
    }
    Ok(bad_gb_year / (monthly_gb * 12.0))
}

/// Share of the bytes `node` sent before `horizon` that were fork intel.
/// Zero when the node sent nothing.
pub fn measured_overhead(ledger: &BandwidthLedger, node: NodeId, horizon: u64) -> f64 {
    let (mut intel, mut total) = (0u64, 0u64);
    for e in ledger.entries().iter().filter(|e| e.from == node && e.tick < horizon) {
        total += e.bytes;
        if e.kind == TrafficKind::ForkIntel {
            intel += e.bytes;
        }
    }
    if total == 0 {
        0.0
    } else {
        intel as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverheadReport {
    pub bad_broadcast_gb_per_year: f64,
    pub monthly_bandwidth_gb: f64,
    pub overhead_fraction: f64,
}

impl OverheadReport {
    pub fn compute(
        n_orphans: f64,
        max_block_mb: f64,
        out_degree: f64,
        monthly_gb: f64,
    ) -> Result<Self, MetricsError> {
        let gb = annual_fork_broadcast(n_orphans, max_block_mb, out_degree);
        Ok(Self {
            bad_broadcast_gb_per_year: gb,
            monthly_bandwidth_gb: monthly_gb,
            overhead_fraction: overhead(gb, monthly_gb)?,
        })
    }
}

/// `(m, overhead)` rows in the order given.
pub fn overhead_curve(bad_gb_year: f64, m_values: &[f64]) -> Result<Vec<(f64, f64)>, MetricsError> {
    m_values
        .iter()
        .map(|&m| overhead(bad_gb_year, m).map(|o| (m, o)))
        .collect()
}

pub fn curve_to_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("m_gb_month,overhead_fraction\n");
    for (m, o) in rows {
        let _ = writeln!(out, "{m},{o}");
    }
    out
}
