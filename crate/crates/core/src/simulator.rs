//! Logical-time execution of a command graph.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use ordered_float::OrderedFloat;

use crate::cluster::Cluster;
use crate::energy::{account_energy, EnergyReport, EnergyTarget};
use crate::error::{Error, Result};
use crate::graph::TaskGraph;
use crate::kernel::{eval_kernel, AccessWindow, EvalError, ReadView};
use crate::model::{apply_mapper, Buffer, BufferId, Scalar, Storage, TaskId, ELEMENT_BYTES};
use crate::region::{GridBox, Point, Region};
use crate::scheduler::{schedule, CommandGraph, CommandId, CommandKind};
use crate::trace::{TraceEvent, TraceKind};

#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Final contents of every buffer, indexed by buffer id.
    pub buffers: Vec<Storage>,
    /// Events sorted by start time, then command id.
    pub trace: Vec<TraceEvent>,
    pub makespan_s: f64,
}

/// Per-node buffer copies, allocated as zeros on first touch.
struct NodeStore<'a> {
    buffers: &'a [Buffer],
    data: Vec<Vec<Option<Storage>>>,
}

impl<'a> NodeStore<'a> {
    fn new(buffers: &'a [Buffer], nodes: usize) -> Self {
        let mut data = vec![vec![None; buffers.len()]; nodes];
        for b in buffers {
            data[0][b.id.0] = b.initial_storage();
        }
        NodeStore { buffers, data }
    }

    fn touch(&mut self, node: usize, buffer: BufferId) -> &mut Storage {
        let b = &self.buffers[buffer.0];
        self.data[node][buffer.0].get_or_insert_with(|| Storage::zeros(b.kind, b.len()))
    }

    fn read_region(&mut self, node: usize, buffer: BufferId, region: &Region) -> Vec<Scalar> {
        let extent = self.buffers[buffer.0].extent;
        let s = self.touch(node, buffer);
        region
            .boxes()
            .iter()
            .flat_map(|bx| bx.points())
            .map(|p| s.get(extent.linear_index(&p)))
            .collect()
    }

    fn write_region(&mut self, node: usize, buffer: BufferId, region: &Region, values: &[Scalar]) {
        let extent = self.buffers[buffer.0].extent;
        let s = self.touch(node, buffer);
        let points = region.boxes().iter().flat_map(|bx| bx.points());
        for (p, v) in points.zip(values) {
            s.set(extent.linear_index(&p), *v);
        }
    }
}

struct ChunkView<'a> {
    windows: BTreeMap<&'a str, (AccessWindow, &'a Storage)>,
}

impl ReadView for ChunkView<'_> {
    fn read(&self, accessor: &str, index: &Point) -> Result<Scalar, EvalError> {
        let (window, storage) = &self.windows[accessor];
        match window.resolve(index) {
            Some(p) => Ok(storage.get(window.extent.linear_index(&p))),
            None => Err(EvalError::MapperViolation {
                accessor: accessor.to_string(),
                index: *index,
            }),
        }
    }
}

pub(crate) fn fmt_point(p: &Point, dims: usize) -> String {
    let parts: Vec<String> = p[..dims].iter().map(ToString::to_string).collect();
    format!("[{}]", parts.join(", "))
}

/// Evaluates every write accessor of one chunk into temporaries, then
/// commits them, so in-place updates see only pre-chunk values.
fn execute_chunk(graph: &TaskGraph, store: &mut NodeStore<'_>, node: usize, task_id: TaskId, chunk: &GridBox) -> Result<()> {
    let task = graph.task(task_id);
    for a in task.reads() {
        store.touch(node, a.buffer);
    }
    let data = &store.data[node];
    let mut windows = BTreeMap::new();
    for a in task.reads() {
        let buffer = graph.buffer(a.buffer);
        let mapped = apply_mapper(&a.mapper, chunk, &task.global_range, &buffer.extent)?;
        let window = AccessWindow::new(&a.mapper, chunk, &buffer.extent, mapped);
        let storage = data[a.buffer.0].as_ref().expect("read buffers are allocated");
        windows.insert(a.name.as_str(), (window, storage));
    }
    let view = ChunkView { windows };

    let mut results: Vec<(BufferId, Vec<(usize, Scalar)>)> = Vec::new();
    for body in &task.body {
        let acc = &task.accessors[body.accessor];
        let buffer = graph.buffer(acc.buffer);
        let mut out = Vec::with_capacity(chunk.volume() as usize);
        for p in chunk.points() {
            let v = eval_kernel(&body.expr, &p, &view, &task.params, buffer.kind).map_err(|e| match e {
                EvalError::MapperViolation { accessor, index } => {
                    let dims = task
                        .accessor(&accessor)
                        .map_or(task.dims(), |a| graph.buffer(a.buffer).dims());
                    Error::MapperViolation {
                        task: task.name.clone(),
                        accessor,
                        index: fmt_point(&index, dims),
                    }
                }
                other => Error::Evaluation {
                    task: task.name.clone(),
                    index: fmt_point(&p, task.dims()),
                    message: other.to_string(),
                },
            })?;
            out.push((buffer.extent.linear_index(&p), v));
        }
        results.push((acc.buffer, out));
    }

    for (b, values) in results {
        let s = store.touch(node, b);
        for (idx, v) in values {
            s.set(idx, v);
        }
    }
    Ok(())
}

/// Executes `commands` in logical time.
///
/// Each command becomes ready when its last dependency finishes. Executes
/// additionally wait for their node's single execute lane; transfers never
/// wait. Ready commands are started in (ready time, id) order, which is also
/// the order in which their data effects are applied.
pub fn run(graph: &TaskGraph, commands: &CommandGraph, cluster: &Cluster) -> Result<RunOutput> {
    let nodes = cluster.node_count();
    if commands.node_count() != nodes {
        return Err(Error::Usage(format!(
            "command graph was generated for {} nodes, cluster has {nodes}",
            commands.node_count()
        )));
    }
    let cmds = commands.commands();
    let n = cmds.len();
    let mut pending = vec![0usize; n];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for c in cmds {
        for d in &c.deps {
            if d.0 >= n {
                return Err(Error::Internal(format!("{} depends on unknown command {}", c.id, d)));
            }
            dependents[d.0].push(c.id.0);
        }
        pending[c.id.0] = c.deps.len();
    }

    let mut store = NodeStore::new(graph.buffers(), nodes);
    let mut lane_free = vec![0.0f64; nodes];
    let mut ready_at = vec![0.0f64; n];
    let mut snapshots: BTreeMap<CommandId, Vec<Scalar>> = BTreeMap::new();
    let mut trace = Vec::with_capacity(n);
    let mut heap: BinaryHeap<Reverse<(OrderedFloat<f64>, usize)>> = (0..n)
        .filter(|&i| pending[i] == 0)
        .map(|i| Reverse((OrderedFloat(0.0), i)))
        .collect();
    let mut done = 0usize;

    while let Some(Reverse((OrderedFloat(ready), i))) = heap.pop() {
        let c = &cmds[i];
        let event = match &c.kind {
            CommandKind::Execute { task, chunk, frequency_ghz } => {
                execute_chunk(graph, &mut store, c.node, *task, chunk)?;
                let t = graph.task(*task);
                let device = cluster.device(c.node);
                let duration = device.kernel_time(device.reference_time(chunk.volume()), t.beta, *frequency_ghz);
                let start = ready.max(lane_free[c.node]);
                lane_free[c.node] = start + duration;
                TraceEvent {
                    node: c.node,
                    command: c.id,
                    kind: TraceKind::Execute,
                    label: format!("{} {} {}", task, t.name, chunk),
                    start_s: start,
                    duration_s: duration,
                    task: Some(*task),
                    bytes: None,
                    frequency_ghz: Some(*frequency_ghz),
                }
            }
            CommandKind::Push { to, buffer, region, .. } => {
                snapshots.insert(c.id, store.read_region(c.node, *buffer, region));
                let bytes = region.volume() * ELEMENT_BYTES;
                TraceEvent {
                    node: c.node,
                    command: c.id,
                    kind: TraceKind::Push,
                    label: format!("push {} {} n{}->n{}", graph.buffer(*buffer).name, region, c.node, to),
                    start_s: ready,
                    duration_s: cluster.link().transfer_time(bytes),
                    task: None,
                    bytes: Some(bytes),
                    frequency_ghz: None,
                }
            }
            CommandKind::AwaitPush { from, buffer, region, push, .. } => {
                let values = snapshots
                    .remove(push)
                    .ok_or_else(|| Error::Internal(format!("{} awaits {} which never ran", c.id, push)))?;
                store.write_region(c.node, *buffer, region, &values);
                TraceEvent {
                    node: c.node,
                    command: c.id,
                    kind: TraceKind::AwaitPush,
                    label: format!("await-push {} {} n{}<-n{}", graph.buffer(*buffer).name, region, c.node, from),
                    start_s: ready,
                    duration_s: 0.0,
                    task: None,
                    bytes: None,
                    frequency_ghz: None,
                }
            }
        };
        let finish = event.finish_s();
        trace.push(event);
        done += 1;
        for &j in &dependents[i] {
            ready_at[j] = ready_at[j].max(finish);
            pending[j] -= 1;
            if pending[j] == 0 {
                heap.push(Reverse((OrderedFloat(ready_at[j]), j)));
            }
        }
    }
    if done != n {
        return Err(Error::Internal(format!("{} commands never became ready", n - done)));
    }

    let mut buffers = Vec::with_capacity(graph.buffers().len());
    for b in graph.buffers() {
        let mut out = Storage::zeros(b.kind, b.len());
        for e in commands.final_table().entries(b.id) {
            if let Some(&holder) = e.holders.first() {
                let values = store.read_region(holder, b.id, &e.region);
                let points = e.region.boxes().iter().flat_map(|bx| bx.points());
                for (p, v) in points.zip(values) {
                    out.set(b.extent.linear_index(&p), v);
                }
            }
        }
        buffers.push(out);
    }

    trace.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.command.cmp(&b.command)));
    let makespan_s = trace.iter().map(TraceEvent::finish_s).fold(0.0, f64::max);
    Ok(RunOutput {
        buffers,
        trace,
        makespan_s,
    })
}

/// A scheduled, executed and accounted run.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub commands: CommandGraph,
    pub output: RunOutput,
    pub energy: EnergyReport,
}

pub fn simulate(graph: &TaskGraph, cluster: &Cluster, queue_target: EnergyTarget) -> Result<Simulation> {
    let commands = schedule(graph, cluster, queue_target)?;
    let output = run(graph, &commands, cluster)?;
    let energy = account_energy(&output.trace, cluster.devices(), output.makespan_s)?;
    Ok(Simulation {
        commands,
        output,
        energy,
    })
}

/// First element at which two sets of buffer contents differ.
#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub buffer: String,
    pub index: String,
    pub expected: Scalar,
    pub actual: Scalar,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "buffer `{}` differs at {}: expected {}, got {}",
            self.buffer, self.index, self.expected, self.actual
        )
    }
}

/// Bit-exact comparison in buffer-id, then row-major, order.
pub fn first_mismatch(buffers: &[Buffer], expected: &[Storage], actual: &[Storage]) -> Option<Mismatch> {
    for ((b, e), a) in buffers.iter().zip(expected).zip(actual) {
        for (i, p) in b.extent.points().enumerate() {
            let (x, y) = (e.get(i), a.get(i));
            if !x.bit_eq(y) {
                return Some(Mismatch {
                    buffer: b.name.clone(),
                    index: fmt_point(&p, b.dims()),
                    expected: x,
                    actual: y,
                });
            }
        }
    }
    None
}

/// Runs `commands` on `cluster` and compares the result with a single-node
/// run of the same program. `None` means every buffer matched bit for bit.
pub fn validate_commands(graph: &TaskGraph, commands: &CommandGraph, cluster: &Cluster) -> Result<Option<Mismatch>> {
    let serial_cluster = Cluster::uniform(cluster.device(0).clone(), 1, cluster.link().clone())?;
    let serial = run(graph, &schedule(graph, &serial_cluster, EnergyTarget::MaxPerf)?, &serial_cluster)?;
    let distributed = run(graph, commands, cluster)?;
    Ok(first_mismatch(graph.buffers(), &serial.buffers, &distributed.buffers))
}

pub fn validate_against_serial(graph: &TaskGraph, cluster: &Cluster, queue_target: EnergyTarget) -> Result<Option<Mismatch>> {
    validate_commands(graph, &schedule(graph, cluster, queue_target)?, cluster)
}
