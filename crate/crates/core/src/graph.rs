//! The distributed queue: task submission in program order and the
//! region-precise task dependency graph.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::kernel::static_footprint_check;
use crate::model::{AccessMode, Buffer, BufferId, BufferInit, ElementKind, RangeMapper, Task, TaskId};
use crate::region::{GridBox, Region};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DepKind {
    Raw,
    War,
    Waw,
}

impl DepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DepKind::Raw => "RAW",
            DepKind::War => "WAR",
            DepKind::Waw => "WAW",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DependencyEdge {
    pub from: TaskId,
    pub to: TaskId,
    pub kind: DepKind,
    pub buffer: BufferId,
    pub conflict: Region,
}

/// Buffers plus submitted tasks. Task ids start at 1; [`TaskId::INIT`] is the
/// virtual task that wrote every host-initialized buffer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaskGraph {
    buffers: Vec<Buffer>,
    tasks: Vec<Task>,
    edges: Vec<DependencyEdge>,
    last_writers: Vec<Vec<(Region, TaskId)>>,
    readers: Vec<Vec<(Region, TaskId)>>,
}

impl TaskGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_buffer(
        &mut self,
        name: impl Into<String>,
        extent: &[u64],
        kind: ElementKind,
        init: BufferInit,
    ) -> Result<BufferId> {
        let name = name.into();
        if !crate::kernel::is_identifier(&name) {
            return Err(Error::Config(format!("buffer name `{name}` is not an identifier")));
        }
        if self.buffers.iter().any(|b| b.name == name) {
            return Err(Error::Config(format!("duplicate buffer name `{name}`")));
        }
        let id = BufferId(self.buffers.len());
        let buffer = Buffer {
            id,
            name,
            extent: GridBox::from_extent(extent)?,
            kind,
            init,
        };
        buffer.validate()?;
        let writers = if buffer.is_host_initialized() {
            vec![(Region::from_box(buffer.extent), TaskId::INIT)]
        } else {
            Vec::new()
        };
        self.last_writers.push(writers);
        self.readers.push(Vec::new());
        self.buffers.push(buffer);
        Ok(id)
    }

    pub fn buffers(&self) -> &[Buffer] {
        &self.buffers
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer {
        &self.buffers[id.0]
    }

    pub fn buffer_by_name(&self, name: &str) -> Option<&Buffer> {
        self.buffers.iter().find(|b| b.name == name)
    }

    pub fn task(&self, id: TaskId) -> &Task {
        &self.tasks[id.0 - 1]
    }

    pub fn tasks(&self) -> impl Iterator<Item = (TaskId, &Task)> {
        self.tasks.iter().enumerate().map(|(i, t)| (TaskId(i + 1), t))
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn edges(&self) -> &[DependencyEdge] {
        &self.edges
    }

    pub fn task_name(&self, id: TaskId) -> &str {
        if id == TaskId::INIT {
            "init"
        } else {
            &self.task(id).name
        }
    }

    /// Checks a task against the graph's buffers without submitting it.
    pub fn check_task(&self, task: &Task) -> Result<()> {
        let cfg = |msg: String| Error::Config(format!("task `{}`: {msg}", task.name));
        let mut written = Vec::new();
        for a in &task.accessors {
            let Some(buffer) = self.buffers.get(a.buffer.0) else {
                return Err(cfg(format!("accessor `{}` references unknown buffer #{}", a.name, a.buffer.0)));
            };
            a.mapper
                .validate(task.dims(), &buffer.extent)
                .map_err(|e| cfg(format!("accessor `{}`: {e}", a.name)))?;
            if a.mode == AccessMode::Write {
                if a.mapper != RangeMapper::OneToOne {
                    return Err(cfg(format!(
                        "write mappers must be one_to_one (accessor `{}` uses {})",
                        a.name,
                        a.mapper.name()
                    )));
                }
                if written.contains(&a.buffer) {
                    return Err(cfg(format!("buffer `{}` has two write accessors", buffer.name)));
                }
                written.push(a.buffer);
            }
            if a.mapper.is_relative() && !buffer.extent.contains_box(&task.global_range) {
                return Err(cfg(format!(
                    "global range {} exceeds the extent {} of buffer `{}` used through {}",
                    task.global_range,
                    buffer.extent,
                    buffer.name,
                    a.mapper.name()
                )));
            }
        }
        for body in &task.body {
            for (name, index) in body.expr.reads() {
                let acc = task
                    .accessor(name)
                    .ok_or_else(|| cfg(format!("read of undeclared accessor `{name}`")))?;
                let dims = self.buffers[acc.buffer.0].dims();
                if index.len() != dims {
                    return Err(cfg(format!(
                        "`{name}` is read with {} index components but its buffer is {dims}D",
                        index.len()
                    )));
                }
            }
        }
        static_footprint_check(task, &self.buffers).map_err(|violations| Error::Footprint {
            task: task.name.clone(),
            violations,
        })
    }

    /// Appends `task` and records its dependencies on earlier tasks.
    pub fn submit(&mut self, task: Task) -> Result<TaskId> {
        self.check_task(&task)?;
        let id = TaskId(self.tasks.len() + 1);
        let range = task.global_range;
        let mut merged: BTreeMap<(TaskId, DepKind, BufferId), Region> = BTreeMap::new();
        let mut updates = Vec::new();
        let mut buffers: Vec<BufferId> = task.accessors.iter().map(|a| a.buffer).collect();
        buffers.sort();
        buffers.dedup();
        for b in buffers {
            let buffer = &self.buffers[b.0];
            let reads = task.mapped_region(&range, buffer, AccessMode::Read)?;
            let writes = task.mapped_region(&range, buffer, AccessMode::Write)?;
            let mut add = |from: TaskId, kind: DepKind, conflict: Region| -> Result<()> {
                if conflict.is_empty() {
                    return Ok(());
                }
                let slot = merged
                    .entry((from, kind, b))
                    .or_insert_with(|| Region::empty(conflict.dims()));
                *slot = slot.union(&conflict)?;
                Ok(())
            };
            for (region, writer) in &self.last_writers[b.0] {
                add(*writer, DepKind::Raw, region.intersect(&reads)?)?;
                add(*writer, DepKind::Waw, region.intersect(&writes)?)?;
            }
            for (region, reader) in &self.readers[b.0] {
                add(*reader, DepKind::War, region.intersect(&writes)?)?;
            }
            updates.push((b, reads, writes));
        }
        for (b, reads, writes) in updates {
            if !writes.is_empty() {
                let lw = &mut self.last_writers[b.0];
                subtract_all(lw, &writes)?;
                lw.push((writes.clone(), id));
                subtract_all(&mut self.readers[b.0], &writes)?;
            }
            if !reads.is_empty() {
                self.readers[b.0].push((reads, id));
            }
        }
        self.edges.extend(merged.into_iter().map(|((from, kind, buffer), conflict)| DependencyEdge {
            from,
            to: id,
            kind,
            buffer,
            conflict,
        }));
        self.tasks.push(task);
        Ok(id)
    }

    /// Submission order, which is always a valid topological order because
    /// edges only point from earlier to later tasks.
    pub fn topological_order(&self) -> Vec<TaskId> {
        (1..=self.tasks.len()).map(TaskId).collect()
    }

    pub fn is_acyclic(&self) -> bool {
        self.edges.iter().all(|e| e.from < e.to)
    }

    /// Graphviz rendering: nodes `T<id>: <name>`, edges `<KIND> <buffer>`.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph tasks {\n");
        if self.buffers.iter().any(Buffer::is_host_initialized) {
            s.push_str("  T0 [label=\"T0: init\"];\n");
        }
        for (id, task) in self.tasks() {
            let _ = writeln!(s, "  T{} [label=\"T{}: {}\"];", id.0, id.0, escape(&task.name));
        }
        for e in &self.edges {
            let _ = writeln!(
                s,
                "  T{} -> T{} [label=\"{} {}\"];",
                e.from.0,
                e.to.0,
                e.kind.as_str(),
                escape(&self.buffers[e.buffer.0].name)
            );
        }
        s.push_str("}\n");
        s
    }
}

fn subtract_all(entries: &mut Vec<(Region, TaskId)>, cut: &Region) -> Result<()> {
    let mut out = Vec::with_capacity(entries.len());
    for (r, t) in entries.drain(..) {
        let rest = r.difference(cut)?;
        if !rest.is_empty() {
            out.push((rest, t));
        }
    }
    *entries = out;
    Ok(())
}

pub(crate) fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
