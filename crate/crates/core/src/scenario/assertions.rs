use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::sim::{NodeId, Simulation, TraceEvent, TraceKind};

use super::{Scenario, ScenarioError};

/// An expected outcome. Time bounds are half-open, `[from, to)`.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Assertion {
    /// The probe taken at `at` saw `injected_depth` injected blocks on top.
    Probe { node: String, at: u64, injected_depth: usize },
    /// The node stores `count` fork records, each with `branch_blocks`
    /// blocks when given.
    ForkRecords {
        node: String,
        count: usize,
        branch_blocks: Option<usize>,
    },
    /// Fork records summed over honest nodes.
    TotalForkRecords { count: usize },
    /// Alerts summed over all nodes.
    TotalAlerts { count: u64 },
    /// The node's database holds exactly this sequence, inserted before
    /// `before` when given.
    HoldsSequence {
        node: String,
        payloads: Vec<String>,
        before: Option<u64>,
    },
    /// How many of `payloads` the node accepted in blocks during the time
    /// bounds.
    AcceptedPayloads {
        node: String,
        payloads: Vec<String>,
        from: Option<u64>,
        to: Option<u64>,
        min: Option<usize>,
        max: Option<usize>,
    },
    /// The node refused a block carrying `payload` during the time bounds.
    RefusedPayload {
        node: String,
        payload: String,
        from: Option<u64>,
        to: Option<u64>,
    },
    /// Single-step matcher work never exceeded Σℓᵢ; with `exact`, the
    /// largest step reached it.
    MatcherWorkBound {
        node: Option<String>,
        #[serde(default)]
        exact: bool,
    },
    /// All honest nodes share one tip.
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssertionResult {
    pub assertion: Assertion,
    pub passed: bool,
    pub detail: String,
}

fn in_bounds(e: &TraceEvent, from: Option<u64>, to: Option<u64>) -> bool {
    from.is_none_or(|f| e.tick >= f) && to.is_none_or(|t| e.tick < t)
}

fn payload_list(detail: &Value) -> Vec<&str> {
    detail["payloads"]
        .as_array()
        .map(|a| a.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default()
}

impl Assertion {
    pub(super) fn validate(
        &self,
        node: &dyn Fn(&str) -> Result<(), ScenarioError>,
        tag: &dyn Fn(&str) -> Result<(), ScenarioError>,
    ) -> Result<(), ScenarioError> {
        match self {
            Assertion::Probe { node: n, .. } | Assertion::ForkRecords { node: n, .. } => node(n),
            Assertion::HoldsSequence { node: n, payloads, .. } | Assertion::AcceptedPayloads { node: n, payloads, .. } => {
                node(n)?;
                payloads.iter().try_for_each(|p| tag(p))
            }
            Assertion::RefusedPayload { node: n, payload, .. } => {
                node(n)?;
                tag(payload)
            }
            Assertion::MatcherWorkBound { node: Some(n), .. } => node(n),
            Assertion::MatcherWorkBound { node: None, .. }
            | Assertion::TotalForkRecords { .. }
            | Assertion::TotalAlerts { .. }
            | Assertion::Converged => Ok(()),
        }
    }

    pub fn check(&self, scenario: &Scenario, sim: &Simulation) -> AssertionResult {
        let id = |name: &str| scenario.sim.node_id(name).expect("validated at load");
        let events_of = |n: NodeId, kind: TraceKind| {
            sim.trace()
                .events()
                .iter()
                .filter(move |e| e.node == n && e.kind == kind)
        };
        let (passed, detail) = match self {
            Assertion::Probe {
                node,
                at,
                injected_depth,
            } => match events_of(id(node), TraceKind::Probe).find(|e| e.tick == *at) {
                Some(e) => {
                    let got = e.detail["injected_depth"].as_u64().unwrap_or(0) as usize;
                    (got == *injected_depth, format!("injected_depth {got}"))
                }
                None => (false, format!("no probe of {node} at {at}")),
            },
            Assertion::ForkRecords {
                node,
                count,
                branch_blocks,
            } => {
                let records = sim.node(id(node)).store().fork_records();
                let lens: Vec<usize> = records.iter().map(|r| r.branch_blocks.len()).collect();
                let ok = records.len() == *count && branch_blocks.is_none_or(|b| lens.iter().all(|&l| l == b));
                (ok, format!("{} records, branch lengths {lens:?}", records.len()))
            }
            Assertion::TotalForkRecords { count } => {
                let total: usize = sim
                    .honest_ids()
                    .iter()
                    .map(|&n| sim.node(n).store().fork_records().len())
                    .sum();
                (total == *count, format!("{total} fork records"))
            }
            Assertion::TotalAlerts { count } => {
                let total: u64 = sim.nodes().iter().map(|n| n.stats().alerts).sum();
                (total == *count, format!("{total} alerts"))
            }
            Assertion::HoldsSequence { node, payloads, before } => {
                let n = id(node);
                let hashes: Vec<_> = payloads
                    .iter()
                    .map(|p| scenario.payloads[p].hash())
                    .collect();
                match sim.node(n).db().sequences().iter().find(|s| s.hashes == hashes) {
                    None => (false, "sequence not in database".to_owned()),
                    Some(seq) => {
                        let inserted = events_of(n, TraceKind::IntelInserted)
                            .find(|e| e.detail["id"].as_u64() == Some(seq.id))
                            .map(|e| e.tick);
                        match (before, inserted) {
                            (None, _) => (true, format!("sequence {}", seq.id)),
                            (Some(b), Some(t)) => (t < *b, format!("sequence {} inserted at {t}", seq.id)),
                            (Some(_), None) => (false, format!("sequence {} has no insertion event", seq.id)),
                        }
                    }
                }
            }
            Assertion::AcceptedPayloads {
                node,
                payloads,
                from,
                to,
                min,
                max,
            } => {
                let wanted: BTreeSet<&str> = payloads.iter().map(String::as_str).collect();
                let accepted: BTreeSet<&str> = events_of(id(node), TraceKind::BlockAccepted)
                    .filter(|e| in_bounds(e, *from, *to))
                    .flat_map(|e| payload_list(&e.detail))
                    .filter(|p| wanted.contains(p))
                    .collect();
                let k = accepted.len();
                let ok = min.is_none_or(|m| k >= m) && max.is_none_or(|m| k <= m);
                (ok, format!("accepted {k}: {accepted:?}"))
            }
            Assertion::RefusedPayload { node, payload, from, to } => {
                let refused = events_of(id(node), TraceKind::BlockRefused)
                    .filter(|e| in_bounds(e, *from, *to))
                    .find(|e| payload_list(&e.detail).contains(&payload.as_str()));
                match refused {
                    Some(e) => (true, format!("refused at {} ({})", e.tick, e.detail["reason"])),
                    None => (false, "no refusal".to_owned()),
                }
            }
            Assertion::MatcherWorkBound { node, exact } => {
                let ids: Vec<NodeId> = match node {
                    Some(n) => vec![id(n)],
                    None => sim.honest_ids().into_iter().collect(),
                };
                let mut ok = true;
                let mut parts = Vec::new();
                for n in ids {
                    let s = sim.node(n).stats();
                    ok &= s.bound_violations == 0;
                    if *exact {
                        ok &= s.max_step_work > 0 && s.max_step_work == s.work_bound_at_max;
                    }
                    parts.push(format!(
                        "{}: max {} bound {} violations {}",
                        sim.node(n).name(),
                        s.max_step_work,
                        s.work_bound_at_max,
                        s.bound_violations
                    ));
                }
                (ok, parts.join("; "))
            }
            Assertion::Converged => {
                let heights: BTreeSet<u64> = sim
                    .honest_ids()
                    .iter()
                    .map(|&n| sim.node(n).store().tip_height())
                    .collect();
                (sim.tips_agree(), format!("tip heights {heights:?}"))
            }
        };
        AssertionResult {
            assertion: self.clone(),
            passed,
            detail,
        }
    }
}
