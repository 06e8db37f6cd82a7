//! Splits tasks across nodes, tracks where the freshest copy of every buffer
//! region lives, and lowers the task graph into a per-node command DAG with
//! explicit push / await-push transfers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::cluster::Cluster;
use crate::energy::{resolve_target, select_frequency, EnergyTarget};
use crate::error::{Error, Result};
use crate::graph::{escape, TaskGraph};
use crate::model::{AccessMode, Buffer, BufferId, NodeId, TaskId, ELEMENT_BYTES};
use crate::region::{GridBox, Region};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct CommandId(pub usize);

impl fmt::Display for CommandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

/// The part of a task's iteration range executed by one node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub task: TaskId,
    pub range: GridBox,
    pub node: NodeId,
}

/// Contiguous static split along dimension 0. Chunk sizes differ by at most
/// one, larger chunks go to lower node ids, and no empty chunks are emitted.
pub fn split_task(task: TaskId, range: &GridBox, node_count: usize) -> Vec<Chunk> {
    let lo = range.lo()[0];
    let n = range.len(0);
    if n == 0 || node_count == 0 {
        return Vec::new();
    }
    let parts = (node_count as u64).min(n);
    let base = n / parts;
    let rem = n % parts;
    let mut start = lo;
    (0..parts)
        .map(|k| {
            let len = base + u64::from(k < rem);
            let chunk = range.with_dim(0, start, start + len as i64);
            start += len as i64;
            Chunk {
                task,
                range: chunk,
                node: k as NodeId,
            }
        })
        .collect()
}

/// One region of a buffer together with its current version and the nodes
/// holding that version.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionEntry {
    pub region: Region,
    pub version: u64,
    pub holders: BTreeSet<NodeId>,
}

#[derive(Clone, Debug, PartialEq)]
struct BufferLocation {
    entries: Vec<RegionEntry>,
    next_version: u64,
}

/// Per buffer, a partition of the extent into regions annotated with the
/// latest version and its holders.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMapTable {
    buffers: Vec<BufferLocation>,
}

impl RegionMapTable {
    /// State after the virtual init task: host-initialized buffers are at
    /// version 1 on node 0, the rest at version 0 with no holders.
    pub fn initial(buffers: &[Buffer]) -> Self {
        let buffers = buffers
            .iter()
            .map(|b| {
                let initialized = b.is_host_initialized();
                BufferLocation {
                    entries: vec![RegionEntry {
                        region: Region::from_box(b.extent),
                        version: u64::from(initialized),
                        holders: if initialized { BTreeSet::from([0]) } else { BTreeSet::new() },
                    }],
                    next_version: 1 + u64::from(initialized),
                }
            })
            .collect();
        RegionMapTable { buffers }
    }

    pub fn entries(&self, buffer: BufferId) -> &[RegionEntry] {
        &self.buffers[buffer.0].entries
    }

    /// The part of `buffer` whose latest version is held by `node`.
    pub fn fresh_on(&self, buffer: BufferId, node: NodeId) -> Result<Region> {
        let entries = self.entries(buffer);
        let dims = entries[0].region.dims();
        let mut acc = Region::empty(dims);
        for e in entries.iter().filter(|e| e.holders.contains(&node)) {
            acc = acc.union(&e.region)?;
        }
        Ok(acc)
    }

    fn bump_version(&mut self, buffer: BufferId) -> u64 {
        let loc = &mut self.buffers[buffer.0];
        let v = loc.next_version;
        loc.next_version += 1;
        v
    }

    fn add_holder(&mut self, buffer: BufferId, region: &Region, node: NodeId) -> Result<()> {
        let loc = &mut self.buffers[buffer.0];
        let mut out = Vec::with_capacity(loc.entries.len() + 1);
        for e in loc.entries.drain(..) {
            let inside = e.region.intersect(region)?;
            if inside.is_empty() || e.holders.contains(&node) {
                out.push(e);
                continue;
            }
            let outside = e.region.difference(region)?;
            let mut holders = e.holders.clone();
            holders.insert(node);
            out.push(RegionEntry { region: inside, version: e.version, holders });
            if !outside.is_empty() {
                out.push(RegionEntry { region: outside, ..e });
            }
        }
        loc.entries = coalesce(out)?;
        Ok(())
    }

    fn overwrite(&mut self, buffer: BufferId, region: &Region, version: u64, node: NodeId) -> Result<()> {
        let loc = &mut self.buffers[buffer.0];
        let mut out = Vec::with_capacity(loc.entries.len() + 1);
        for e in loc.entries.drain(..) {
            let rest = e.region.difference(region)?;
            if !rest.is_empty() {
                out.push(RegionEntry { region: rest, ..e });
            }
        }
        out.push(RegionEntry {
            region: region.clone(),
            version,
            holders: BTreeSet::from([node]),
        });
        loc.entries = coalesce(out)?;
        Ok(())
    }
}

/// Merges entries with identical version and holders; sorted for determinism.
fn coalesce(entries: Vec<RegionEntry>) -> Result<Vec<RegionEntry>> {
    let mut groups: BTreeMap<(u64, Vec<NodeId>), Region> = BTreeMap::new();
    for e in entries {
        let key = (e.version, e.holders.iter().copied().collect());
        match groups.get_mut(&key) {
            Some(r) => *r = r.union(&e.region)?,
            None => {
                groups.insert(key, e.region);
            }
        }
    }
    Ok(groups
        .into_iter()
        .map(|((version, holders), region)| RegionEntry {
            region,
            version,
            holders: holders.into_iter().collect(),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub enum CommandKind {
    Execute {
        task: TaskId,
        chunk: GridBox,
        frequency_ghz: f64,
    },
    Push {
        to: NodeId,
        buffer: BufferId,
        region: Region,
        version: u64,
    },
    AwaitPush {
        from: NodeId,
        buffer: BufferId,
        region: Region,
        version: u64,
        push: CommandId,
    },
}

/// A command runs on `node` once every command in `deps` has finished.
/// Dependencies always have smaller ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Command {
    pub id: CommandId,
    pub node: NodeId,
    pub kind: CommandKind,
    pub deps: Vec<CommandId>,
}

impl Command {
    pub fn is_execute(&self) -> bool {
        matches!(self.kind, CommandKind::Execute { .. })
    }

    pub fn is_push(&self) -> bool {
        matches!(self.kind, CommandKind::Push { .. })
    }

    pub fn is_await_push(&self) -> bool {
        matches!(self.kind, CommandKind::AwaitPush { .. })
    }
}

#[derive(Clone, Debug)]
pub struct CommandGraph {
    commands: Vec<Command>,
    node_count: usize,
    table: RegionMapTable,
}

impl CommandGraph {
    pub fn commands(&self) -> &[Command] {
        &self.commands
    }

    pub fn command(&self, id: CommandId) -> &Command {
        &self.commands[id.0]
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Data location after every task has been scheduled.
    pub fn final_table(&self) -> &RegionMapTable {
        &self.table
    }

    pub fn pushes(&self) -> impl Iterator<Item = &Command> {
        self.commands.iter().filter(|c| c.is_push())
    }

    /// Number of pushes and total bytes moved.
    pub fn transfer_stats(&self) -> (usize, u64) {
        self.pushes().fold((0, 0), |(n, bytes), c| match &c.kind {
            CommandKind::Push { region, .. } => (n + 1, bytes + region.volume() * ELEMENT_BYTES),
            _ => (n, bytes),
        })
    }

    /// Keeps only commands for which `keep` returns true, renumbering ids and
    /// dropping dependencies on removed commands. `keep` sees a copy of each
    /// command and may edit it, which test fixtures use to corrupt graphs.
    /// The final location table is kept as is.
    pub fn retain(&self, mut keep: impl FnMut(&mut Command) -> bool) -> CommandGraph {
        let mut remap = BTreeMap::new();
        let mut commands = Vec::new();
        for c in &self.commands {
            let mut c = c.clone();
            if !keep(&mut c) {
                continue;
            }
            let id = CommandId(commands.len());
            remap.insert(c.id, id);
            if let CommandKind::AwaitPush { push, .. } = &mut c.kind {
                *push = remap.get(push).copied().unwrap_or(CommandId(usize::MAX));
            }
            c.deps = c.deps.iter().filter_map(|d| remap.get(d).copied()).collect();
            c.id = id;
            commands.push(c);
        }
        CommandGraph {
            commands,
            node_count: self.node_count,
            table: self.table.clone(),
        }
    }

    pub fn label(&self, c: &Command, graph: &TaskGraph) -> String {
        match &c.kind {
            CommandKind::Execute { task, chunk, frequency_ghz } => format!(
                "{}: execute {} {} {} on n{} @ {} GHz",
                c.id,
                task,
                graph.task_name(*task),
                chunk,
                c.node,
                frequency_ghz
            ),
            CommandKind::Push { to, buffer, region, version } => format!(
                "{}: push {} {} n{}->n{} v{}",
                c.id,
                graph.buffer(*buffer).name,
                region,
                c.node,
                to,
                version
            ),
            CommandKind::AwaitPush { from, buffer, region, version, .. } => format!(
                "{}: await-push {} {} n{}<-n{} v{}",
                c.id,
                graph.buffer(*buffer).name,
                region,
                c.node,
                from,
                version
            ),
        }
    }

    /// Graphviz rendering with nodes `C<seq>`; push-to-await pairing edges
    /// are dashed.
    pub fn to_dot(&self, graph: &TaskGraph) -> String {
        let mut s = String::from("digraph commands {\n");
        for c in &self.commands {
            let shape = if c.is_execute() { "box" } else { "ellipse" };
            let _ = writeln!(
                s,
                "  C{} [label=\"{}\", shape={shape}];",
                c.id.0,
                escape(&self.label(c, graph))
            );
        }
        for c in &self.commands {
            for d in &c.deps {
                let paired = matches!(&c.kind, CommandKind::AwaitPush { push, .. } if push == d);
                let style = if paired { " [style=dashed]" } else { "" };
                let _ = writeln!(s, "  C{} -> C{}{style};", d.0, c.id.0);
            }
        }
        s.push_str("}\n");
        s
    }
}

/// Commands on one node that last wrote, or have read since, each region of
/// one buffer.
#[derive(Clone, Debug, Default)]
struct LocalAccess {
    writers: Vec<(Region, CommandId)>,
    readers: Vec<(Region, CommandId)>,
}

impl LocalAccess {
    fn overlapping(list: &[(Region, CommandId)], region: &Region, out: &mut BTreeSet<CommandId>) -> Result<()> {
        for (r, c) in list {
            if !r.intersect(region)?.is_empty() {
                out.insert(*c);
            }
        }
        Ok(())
    }

    fn record_read(&mut self, region: &Region, cmd: CommandId) {
        if !region.is_empty() {
            self.readers.push((region.clone(), cmd));
        }
    }

    fn record_write(&mut self, region: &Region, cmd: CommandId) -> Result<()> {
        if region.is_empty() {
            return Ok(());
        }
        for list in [&mut self.writers, &mut self.readers] {
            let mut kept = Vec::with_capacity(list.len());
            for (r, c) in list.drain(..) {
                let rest = r.difference(region)?;
                if !rest.is_empty() {
                    kept.push((rest, c));
                }
            }
            *list = kept;
        }
        self.writers.push((region.clone(), cmd));
        Ok(())
    }
}

struct Generator<'a> {
    graph: &'a TaskGraph,
    cluster: &'a Cluster,
    queue_target: EnergyTarget,
    table: RegionMapTable,
    local: Vec<Vec<LocalAccess>>,
    commands: Vec<Command>,
}

impl Generator<'_> {
    fn emit(&mut self, node: NodeId, kind: CommandKind, deps: BTreeSet<CommandId>) -> CommandId {
        let id = CommandId(self.commands.len());
        self.commands.push(Command {
            id,
            node,
            kind,
            deps: deps.into_iter().collect(),
        });
        id
    }

    fn chunk_regions(&self, task: TaskId, chunk: &Chunk, mode: AccessMode) -> Result<Vec<(BufferId, Region)>> {
        let t = self.graph.task(task);
        t.buffers(mode)
            .into_iter()
            .map(|b| Ok((b, t.mapped_region(&chunk.range, self.graph.buffer(b), mode)?)))
            .filter(|r| !matches!(r, Ok((_, region)) if region.is_empty()))
            .collect()
    }

    /// Emits the transfers that make `region` of `buffer` fresh on `node`.
    fn fetch(&mut self, task: TaskId, buffer: BufferId, region: &Region, node: NodeId) -> Result<Vec<CommandId>> {
        let missing = region.difference(&self.table.fresh_on(buffer, node)?)?;
        if missing.is_empty() {
            return Ok(Vec::new());
        }
        let mut uninit = Region::empty(missing.dims());
        let mut groups: BTreeMap<(NodeId, u64), Region> = BTreeMap::new();
        for e in self.table.entries(buffer) {
            let part = e.region.intersect(&missing)?;
            if part.is_empty() {
                continue;
            }
            match e.holders.first() {
                None => uninit = uninit.union(&part)?,
                Some(&src) => {
                    let slot = groups
                        .entry((src, e.version))
                        .or_insert_with(|| Region::empty(part.dims()));
                    *slot = slot.union(&part)?;
                }
            }
        }
        if !uninit.is_empty() {
            return Err(Error::UninitializedRead {
                task: self.graph.task_name(task).to_string(),
                buffer: self.graph.buffer(buffer).name.clone(),
                region: uninit,
            });
        }
        let mut awaits = Vec::new();
        for ((src, version), part) in groups {
            let mut deps = BTreeSet::new();
            LocalAccess::overlapping(&self.local[src][buffer.0].writers, &part, &mut deps)?;
            let push = self.emit(
                src,
                CommandKind::Push {
                    to: node,
                    buffer,
                    region: part.clone(),
                    version,
                },
                deps,
            );
            self.local[src][buffer.0].record_read(&part, push);

            let mut deps = BTreeSet::from([push]);
            let dst = &self.local[node][buffer.0];
            LocalAccess::overlapping(&dst.writers, &part, &mut deps)?;
            LocalAccess::overlapping(&dst.readers, &part, &mut deps)?;
            let await_push = self.emit(
                node,
                CommandKind::AwaitPush {
                    from: src,
                    buffer,
                    region: part.clone(),
                    version,
                    push,
                },
                deps,
            );
            self.local[node][buffer.0].record_write(&part, await_push)?;
            self.table.add_holder(buffer, &part, node)?;
            awaits.push(await_push);
        }
        Ok(awaits)
    }

    fn schedule_task(&mut self, task: TaskId) -> Result<()> {
        let t = self.graph.task(task);
        let chunks = split_task(task, &t.global_range, self.cluster.node_count());
        let mut plans = Vec::with_capacity(chunks.len());
        for chunk in &chunks {
            let reads = self.chunk_regions(task, chunk, AccessMode::Read)?;
            let writes = self.chunk_regions(task, chunk, AccessMode::Write)?;
            let mut awaits = Vec::new();
            for (b, region) in &reads {
                awaits.extend(self.fetch(task, *b, region, chunk.node)?);
            }
            plans.push((chunk, reads, writes, awaits));
        }

        let target = resolve_target(self.queue_target, t.target);
        for (chunk, reads, writes, awaits) in &plans {
            let n = chunk.node;
            let mut deps: BTreeSet<CommandId> = awaits.iter().copied().collect();
            for (b, region) in reads {
                LocalAccess::overlapping(&self.local[n][b.0].writers, region, &mut deps)?;
            }
            for (b, region) in writes {
                let local = &self.local[n][b.0];
                LocalAccess::overlapping(&local.writers, region, &mut deps)?;
                LocalAccess::overlapping(&local.readers, region, &mut deps)?;
            }
            let device = self.cluster.device(n);
            let t_ref = device.reference_time(chunk.range.volume());
            let frequency_ghz = select_frequency(device, target, t_ref, t.beta);
            let exec = self.emit(
                n,
                CommandKind::Execute {
                    task,
                    chunk: chunk.range,
                    frequency_ghz,
                },
                deps,
            );
            for (b, region) in reads {
                self.local[n][b.0].record_read(region, exec);
            }
            for (b, region) in writes {
                self.local[n][b.0].record_write(region, exec)?;
            }
        }

        for b in t.buffers(AccessMode::Write) {
            let version = self.table.bump_version(b);
            for (chunk, _, writes, _) in &plans {
                if let Some((_, region)) = writes.iter().find(|(wb, _)| *wb == b) {
                    self.table.overwrite(b, region, version, chunk.node)?;
                }
            }
        }
        Ok(())
    }
}

/// Lowers `graph` into a command DAG for `cluster`, starting from the data
/// locations in `table`.
///
/// Tasks are processed in topological order. Each chunk fetches the parts of
/// its read regions its node does not hold at the latest version, pulling
/// every missing piece from the lowest-numbered holder. The chunk's execute
/// then runs at the frequency chosen for its task's energy target.
pub fn generate_commands(
    graph: &TaskGraph,
    cluster: &Cluster,
    queue_target: EnergyTarget,
    table: RegionMapTable,
) -> Result<CommandGraph> {
    let nodes = cluster.node_count();
    let mut gen = Generator {
        graph,
        cluster,
        queue_target,
        table,
        local: vec![vec![LocalAccess::default(); graph.buffers().len()]; nodes],
        commands: Vec::new(),
    };
    for task in graph.topological_order() {
        gen.schedule_task(task)?;
    }
    Ok(CommandGraph {
        commands: gen.commands,
        node_count: nodes,
        table: gen.table,
    })
}

/// [`generate_commands`] from the initial data locations.
pub fn schedule(graph: &TaskGraph, cluster: &Cluster, queue_target: EnergyTarget) -> Result<CommandGraph> {
    generate_commands(graph, cluster, queue_target, RegionMapTable::initial(graph.buffers()))
}
