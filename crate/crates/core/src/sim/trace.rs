use serde::Serialize;
use serde_json::Value;

use super::config::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Mined,
    Injected,
    InjectFailed,
    BlockAccepted,
    BlockRefused,
    BlockInvalid,
    OrphanBuffered,
    OrphanExpired,
    Reorg,
    ForkRecorded,
    Alert,
    Inspection,
    IntelInserted,
    IntelDiscarded,
    IntelDeferred,
    EclipseStart,
    EclipseEnd,
    EclipseFailed,
    LinkChanged,
    Probe,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub tick: u64,
    pub node: NodeId,
    pub kind: TraceKind,
    pub detail: Value,
}

/// Append-only event log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceLog {
    events: Vec<TraceEvent>,
}

impl TraceLog {
    pub fn push(&mut self, event: TraceEvent) {
        log::debug!(
            "t={} node={} {:?} {}",
            event.tick,
            event.node,
            event.kind,
            event.detail
        );
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = &TraceEvent> + '_ {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn for_node(&self, node: NodeId) -> impl Iterator<Item = &TraceEvent> + '_ {
        self.events.iter().filter(move |e| e.node == node)
    }

    /// One JSON object per line. Detail keys come out sorted.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("plain data serializes"));
            out.push('\n');
        }
        out
    }
}
