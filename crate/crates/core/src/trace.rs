//! Simulation trace events and their Chrome trace-event export.

use serde::Serialize;

use crate::model::{NodeId, TaskId};
use crate::scheduler::CommandId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Execute,
    Push,
    AwaitPush,
}

impl TraceKind {
    /// Chrome-trace thread id: one execute lane, transfers share lane 1.
    pub fn lane(self) -> u32 {
        match self {
            TraceKind::Execute => 0,
            TraceKind::Push | TraceKind::AwaitPush => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceEvent {
    pub node: NodeId,
    pub command: CommandId,
    pub kind: TraceKind,
    pub label: String,
    pub start_s: f64,
    pub duration_s: f64,
    /// Set for executes.
    pub task: Option<TaskId>,
    /// Set for pushes.
    pub bytes: Option<u64>,
    /// Set for executes.
    pub frequency_ghz: Option<f64>,
}

impl TraceEvent {
    pub fn finish_s(&self) -> f64 {
        self.start_s + self.duration_s
    }
}

#[derive(Serialize)]
struct ChromeEvent<'a> {
    name: &'a str,
    ph: &'static str,
    pid: NodeId,
    tid: u32,
    ts: f64,
    dur: f64,
}

/// Renders events as a Chrome trace-event JSON array (`ph: "X"`, timestamps
/// in microseconds, one process per node).
pub fn chrome_trace_json(events: &[TraceEvent]) -> String {
    let out: Vec<ChromeEvent<'_>> = events
        .iter()
        .map(|e| ChromeEvent {
            name: &e.label,
            ph: "X",
            pid: e.node,
            tid: e.kind.lane(),
            ts: e.start_s * 1e6,
            dur: e.duration_s * 1e6,
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&out).expect("trace events serialize");
    s.push('\n');
    s
}
