//! Run report and buffer dump rendering.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::energy::EnergyTarget;
use crate::graph::TaskGraph;
use crate::model::{Buffer, Storage};
use crate::simulator::Simulation;

#[derive(Serialize)]
struct Report<'a> {
    nodes: usize,
    queue_target: EnergyTarget,
    makespan_s: f64,
    per_task: Vec<TaskRow<'a>>,
    per_device: Vec<DeviceRow>,
    transfers: Transfers,
    totals: Totals,
    buffers: BTreeMap<&'a str, &'a Storage>,
}

#[derive(Serialize)]
struct TaskRow<'a> {
    id: usize,
    name: &'a str,
    duration_s: f64,
    energy_j: f64,
    frequency_ghz_per_node: &'a [Option<f64>],
}

#[derive(Serialize)]
struct DeviceRow {
    node: usize,
    energy_j: f64,
    busy_s: f64,
    idle_s: f64,
}

#[derive(Serialize)]
struct Transfers {
    count: usize,
    total_bytes: u64,
}

#[derive(Serialize)]
struct Totals {
    kernel_energy_j: f64,
    idle_energy_j: f64,
    device_energy_j: f64,
}

#[derive(Serialize)]
struct BufferDump<'a> {
    name: &'a str,
    kind: &'static str,
    extent: Vec<i64>,
    values: &'a Storage,
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// `report.json` for a finished run. Every number is copied from `sim`.
pub fn report_json(graph: &TaskGraph, sim: &Simulation, queue_target: EnergyTarget) -> String {
    let energy = &sim.energy;
    let (count, total_bytes) = sim.commands.transfer_stats();
    let report = Report {
        nodes: sim.commands.node_count(),
        queue_target,
        makespan_s: sim.output.makespan_s,
        per_task: energy
            .per_task
            .iter()
            .map(|t| TaskRow {
                id: t.task.0,
                name: graph.task_name(t.task),
                duration_s: t.duration_s,
                energy_j: t.energy_j,
                frequency_ghz_per_node: &t.frequency_ghz_per_node,
            })
            .collect(),
        per_device: energy
            .per_device
            .iter()
            .map(|d| DeviceRow {
                node: d.node,
                energy_j: d.energy_j,
                busy_s: d.busy_s,
                idle_s: d.idle_s,
            })
            .collect(),
        transfers: Transfers { count, total_bytes },
        totals: Totals {
            kernel_energy_j: energy.total_kernel_energy_j,
            idle_energy_j: energy.total_idle_energy_j,
            device_energy_j: energy.total_device_energy_j,
        },
        buffers: graph
            .buffers()
            .iter()
            .map(|b| (b.name.as_str(), &sim.output.buffers[b.id.0]))
            .collect(),
    };
    pretty(&report)
}

/// Contents of `buf_<name>.json`.
pub fn buffer_json(buffer: &Buffer, values: &Storage) -> String {
    pretty(&BufferDump {
        name: &buffer.name,
        kind: buffer.kind.as_str(),
        extent: buffer.extent.hi().to_vec(),
        values,
    })
}
