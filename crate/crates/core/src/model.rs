//! Buffers, accessors, range mappers and task descriptions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::energy::EnergyTarget;
use crate::error::{Error, Result};
use crate::kernel::{self, KernelExpr};
use crate::region::{GridBox, Region};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct BufferId(pub usize);

/// Task identifier. `TaskId::INIT` is the virtual task that owns host data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct TaskId(pub usize);

impl TaskId {
    pub const INIT: TaskId = TaskId(0);
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}

pub type NodeId = usize;

/// Bytes per element, for both element kinds.
pub const ELEMENT_BYTES: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementKind {
    Float64,
    Int64,
}

impl ElementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Float64 => "float64",
            ElementKind::Int64 => "int64",
        }
    }
}

/// Host-side initial contents of a buffer.
#[derive(Clone, Debug, PartialEq)]
pub enum BufferInit {
    /// Not host-initialized; reading before a write is an error.
    Uninitialized,
    Zeros,
    /// Row-major linear index of each element.
    Iota,
    Constant(f64),
    Values(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scalar {
    F64(f64),
    I64(i64),
}

impl Scalar {
    pub fn as_f64(self) -> f64 {
        match self {
            Scalar::F64(v) => v,
            Scalar::I64(v) => v as f64,
        }
    }

    pub fn as_i64(self) -> i64 {
        match self {
            Scalar::F64(v) => v as i64,
            Scalar::I64(v) => v,
        }
    }

    /// Bit-level equality (distinguishes `-0.0` from `0.0`, equates NaNs with
    /// identical payloads).
    pub fn bit_eq(self, other: Scalar) -> bool {
        match (self, other) {
            (Scalar::F64(a), Scalar::F64(b)) => a.to_bits() == b.to_bits(),
            (Scalar::I64(a), Scalar::I64(b)) => a == b,
            _ => false,
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::F64(v) => write!(f, "{v}"),
            Scalar::I64(v) => write!(f, "{v}"),
        }
    }
}

/// Dense row-major element storage covering a buffer's full extent.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Storage {
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl Storage {
    pub fn zeros(kind: ElementKind, len: usize) -> Self {
        match kind {
            ElementKind::Float64 => Storage::F64(vec![0.0; len]),
            ElementKind::Int64 => Storage::I64(vec![0; len]),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Storage::F64(v) => v.len(),
            Storage::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, idx: usize) -> Scalar {
        match self {
            Storage::F64(v) => Scalar::F64(v[idx]),
            Storage::I64(v) => Scalar::I64(v[idx]),
        }
    }

    pub fn set(&mut self, idx: usize, value: Scalar) {
        match self {
            Storage::F64(v) => v[idx] = value.as_f64(),
            Storage::I64(v) => v[idx] = value.as_i64(),
        }
    }

    pub fn kind(&self) -> ElementKind {
        match self {
            Storage::F64(_) => ElementKind::Float64,
            Storage::I64(_) => ElementKind::Int64,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Scalar> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Buffer {
    pub id: BufferId,
    pub name: String,
    pub extent: GridBox,
    pub kind: ElementKind,
    pub init: BufferInit,
}

impl Buffer {
    pub fn dims(&self) -> usize {
        self.extent.dims()
    }

    pub fn len(&self) -> usize {
        self.extent.volume() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_host_initialized(&self) -> bool {
        self.init != BufferInit::Uninitialized
    }

    /// Host contents, `None` for uninitialized buffers.
    pub fn initial_storage(&self) -> Option<Storage> {
        let n = self.len();
        let mut s = Storage::zeros(self.kind, n);
        match &self.init {
            BufferInit::Uninitialized => return None,
            BufferInit::Zeros => {}
            BufferInit::Iota => {
                for i in 0..n {
                    s.set(i, Scalar::I64(i as i64));
                }
            }
            BufferInit::Constant(v) => {
                for i in 0..n {
                    s.set(i, Scalar::F64(*v));
                }
            }
            BufferInit::Values(vals) => {
                for (i, v) in vals.iter().enumerate() {
                    s.set(i, Scalar::F64(*v));
                }
            }
        }
        Some(s)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.extent.is_empty() {
            return Err(Error::Config(format!("buffer `{}` has an empty extent", self.name)));
        }
        if self.extent.lo().iter().any(|&m| m != 0) {
            return Err(Error::Config(format!("buffer `{}` extent must start at 0", self.name)));
        }
        match &self.init {
            BufferInit::Values(vals) if vals.len() != self.len() => Err(Error::Config(format!(
                "buffer `{}` has {} initial values for {} elements",
                self.name,
                vals.len(),
                self.len()
            ))),
            BufferInit::Values(vals)
                if self.kind == ElementKind::Int64 && vals.iter().any(|v| v.fract() != 0.0) =>
            {
                Err(Error::Config(format!(
                    "buffer `{}` is int64 but has non-integral initial values",
                    self.name
                )))
            }
            BufferInit::Constant(v) if self.kind == ElementKind::Int64 && v.fract() != 0.0 => {
                Err(Error::Config(format!(
                    "buffer `{}` is int64 but its constant is not integral",
                    self.name
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessMode {
    Read,
    Write,
}

/// Maps a chunk of a kernel's iteration range to the buffer region it
/// touches.
#[derive(Clone, Debug, PartialEq)]
pub enum RangeMapper {
    /// Each index touches exactly itself.
    OneToOne,
    /// The chunk dilated by a per-dimension radius.
    Neighborhood(Vec<u64>),
    /// A constant region independent of the chunk.
    Fixed(Region),
    /// The whole buffer.
    All,
    /// The chunk extended to the full buffer extent along one dimension.
    Slice(usize),
}

impl RangeMapper {
    /// Relative mappers follow the chunk; their footprint is defined before
    /// clamping to the buffer extent.
    pub fn is_relative(&self) -> bool {
        matches!(
            self,
            RangeMapper::OneToOne | RangeMapper::Neighborhood(_) | RangeMapper::Slice(_)
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            RangeMapper::OneToOne => "one_to_one",
            RangeMapper::Neighborhood(_) => "neighborhood",
            RangeMapper::Fixed(_) => "fixed",
            RangeMapper::All => "all",
            RangeMapper::Slice(_) => "slice",
        }
    }

    /// Checks that the mapper can be applied to a `kernel_dims` kernel over a
    /// buffer with `extent`.
    pub fn validate(&self, kernel_dims: usize, extent: &GridBox) -> Result<()> {
        let bdims = extent.dims();
        let need_same_dims = |what: &str| {
            if kernel_dims != bdims {
                Err(Error::Config(format!(
                    "{what} mapper needs kernel dims ({kernel_dims}) = buffer dims ({bdims})"
                )))
            } else {
                Ok(())
            }
        };
        match self {
            RangeMapper::OneToOne => need_same_dims("one_to_one"),
            RangeMapper::Neighborhood(r) => {
                need_same_dims("neighborhood")?;
                if r.len() != bdims {
                    return Err(Error::Config(format!(
                        "neighborhood has {} radii for a {bdims}D buffer",
                        r.len()
                    )));
                }
                Ok(())
            }
            RangeMapper::Fixed(region) => {
                if region.dims() != bdims {
                    return Err(Error::Config(format!(
                        "fixed region is {}D but the buffer is {bdims}D",
                        region.dims()
                    )));
                }
                Ok(())
            }
            RangeMapper::All => Ok(()),
            RangeMapper::Slice(d) => {
                need_same_dims("slice")?;
                if *d >= bdims {
                    return Err(Error::Config(format!(
                        "slice dimension {d} out of range for a {bdims}D buffer"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Footprint of a relative mapper before clamping; `None` for absolute
    /// mappers.
    pub fn unclamped_footprint(&self, chunk: &GridBox) -> Option<GridBox> {
        match self {
            RangeMapper::OneToOne => Some(*chunk),
            RangeMapper::Neighborhood(r) => Some(chunk.dilate(r)),
            RangeMapper::Slice(d) => Some(chunk.with_dim(*d, i64::MIN, i64::MAX)),
            RangeMapper::Fixed(_) | RangeMapper::All => None,
        }
    }

    pub fn apply(&self, chunk: &GridBox, kernel_range: &GridBox, extent: &GridBox) -> Result<Region> {
        apply_mapper(self, chunk, kernel_range, extent)
    }
}

impl fmt::Display for RangeMapper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RangeMapper::Neighborhood(r) => write!(f, "neighborhood({r:?})"),
            RangeMapper::Fixed(region) => write!(f, "fixed({region})"),
            RangeMapper::Slice(d) => write!(f, "slice({d})"),
            other => f.write_str(other.name()),
        }
    }
}

/// The buffer region that `chunk` of a kernel over `kernel_range` requires
/// (reads) or produces (writes), clamped to `buffer_extent`.
pub fn apply_mapper(
    mapper: &RangeMapper,
    chunk: &GridBox,
    kernel_range: &GridBox,
    buffer_extent: &GridBox,
) -> Result<Region> {
    mapper.validate(kernel_range.dims(), buffer_extent)?;
    if chunk.dims() != kernel_range.dims() || !kernel_range.contains_box(chunk) {
        return Err(Error::Config(format!(
            "chunk {chunk} is not inside kernel range {kernel_range}"
        )));
    }
    if chunk.is_empty() {
        return Ok(Region::empty(buffer_extent.dims()));
    }
    let clamp = |b: GridBox| -> Result<Region> {
        Ok(b.intersect(buffer_extent)?
            .map(Region::from_box)
            .unwrap_or_else(|| Region::empty(buffer_extent.dims())))
    };
    match mapper {
        RangeMapper::All => Ok(Region::from_box(*buffer_extent)),
        RangeMapper::Fixed(region) => Ok(region.intersect_box(buffer_extent)?),
        relative => clamp(relative.unclamped_footprint(chunk).expect("relative mapper")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Accessor {
    pub name: String,
    pub buffer: BufferId,
    pub mode: AccessMode,
    pub mapper: RangeMapper,
}

/// The expression computing one write accessor's element.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelBody {
    pub accessor: usize,
    pub expr: KernelExpr,
}

/// One `parallel_for` submission.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub name: String,
    /// Iteration space; starts at the origin unless an offset was given.
    pub global_range: GridBox,
    pub accessors: Vec<Accessor>,
    pub body: Vec<KernelBody>,
    pub params: BTreeMap<String, f64>,
    /// Frequency-insensitive fraction of the kernel's run time.
    pub beta: f64,
    pub target: Option<EnergyTarget>,
}

impl Task {
    pub fn dims(&self) -> usize {
        self.global_range.dims()
    }

    pub fn accessor(&self, name: &str) -> Option<&Accessor> {
        self.accessors.iter().find(|a| a.name == name)
    }

    pub fn reads(&self) -> impl Iterator<Item = &Accessor> {
        self.accessors.iter().filter(|a| a.mode == AccessMode::Read)
    }

    pub fn writes(&self) -> impl Iterator<Item = &Accessor> {
        self.accessors.iter().filter(|a| a.mode == AccessMode::Write)
    }

    /// Union of mapped regions for every accessor of `buffer` with `mode`.
    pub fn mapped_region(
        &self,
        chunk: &GridBox,
        buffer: &Buffer,
        mode: AccessMode,
    ) -> Result<Region> {
        let mut acc = Region::empty(buffer.dims());
        for a in self
            .accessors
            .iter()
            .filter(|a| a.buffer == buffer.id && a.mode == mode)
        {
            let r = apply_mapper(&a.mapper, chunk, &self.global_range, &buffer.extent)?;
            acc = acc.union(&r)?;
        }
        Ok(acc)
    }

    /// Buffers touched by this task in `mode`, deduplicated and sorted.
    pub fn buffers(&self, mode: AccessMode) -> Vec<BufferId> {
        self.accessors
            .iter()
            .filter(|a| a.mode == mode)
            .map(|a| a.buffer)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// Incremental construction of a [`Task`]; kernel bodies are parsed by
/// [`TaskBuilder::build`].
#[derive(Clone, Debug)]
pub struct TaskBuilder {
    name: String,
    range: Vec<u64>,
    offset: Option<Vec<u64>>,
    accessors: Vec<Accessor>,
    bodies: Vec<(String, String)>,
    params: BTreeMap<String, f64>,
    beta: f64,
    target: Option<EnergyTarget>,
}

impl TaskBuilder {
    pub fn new(name: impl Into<String>, range: &[u64]) -> Self {
        TaskBuilder {
            name: name.into(),
            range: range.to_vec(),
            offset: None,
            accessors: Vec::new(),
            bodies: Vec::new(),
            params: BTreeMap::new(),
            beta: 0.0,
            target: None,
        }
    }

    pub fn accessor(
        mut self,
        name: impl Into<String>,
        buffer: BufferId,
        mode: AccessMode,
        mapper: RangeMapper,
    ) -> Self {
        self.accessors.push(Accessor {
            name: name.into(),
            buffer,
            mode,
            mapper,
        });
        self
    }

    pub fn read(self, name: impl Into<String>, buffer: BufferId, mapper: RangeMapper) -> Self {
        self.accessor(name, buffer, AccessMode::Read, mapper)
    }

    pub fn write(self, name: impl Into<String>, buffer: BufferId) -> Self {
        self.accessor(name, buffer, AccessMode::Write, RangeMapper::OneToOne)
    }

    /// Shifts the iteration range so that it starts at `offset`.
    pub fn offset(mut self, offset: &[u64]) -> Self {
        self.offset = Some(offset.to_vec());
        self
    }

    pub fn body(mut self, accessor: impl Into<String>, text: impl Into<String>) -> Self {
        self.bodies.push((accessor.into(), text.into()));
        self
    }

    pub fn param(mut self, name: impl Into<String>, value: f64) -> Self {
        self.params.insert(name.into(), value);
        self
    }

    pub fn beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn target(mut self, target: Option<EnergyTarget>) -> Self {
        self.target = target;
        self
    }

    pub fn build(self) -> Result<Task> {
        let name = self.name;
        let cfg = |msg: String| Error::Config(format!("task `{name}`: {msg}"));
        let origin = self.offset.clone().unwrap_or_else(|| vec![0; self.range.len()]);
        if origin.len() != self.range.len() {
            return Err(cfg(format!(
                "offset has {} components for a {}D range",
                origin.len(),
                self.range.len()
            )));
        }
        let lo: Vec<i64> = origin.iter().map(|&o| o as i64).collect();
        let hi: Vec<i64> = origin.iter().zip(&self.range).map(|(&o, &r)| (o + r) as i64).collect();
        let global_range = GridBox::new(&lo, &hi)?;
        if global_range.is_empty() {
            return Err(cfg("empty global range".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(cfg(format!("beta {} outside [0, 1]", self.beta)));
        }
        let mut seen = BTreeSet::new();
        for a in &self.accessors {
            if !kernel::is_identifier(&a.name) || a.name == "i" {
                return Err(cfg(format!("invalid accessor name `{}`", a.name)));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(cfg(format!("duplicate accessor name `{}`", a.name)));
            }
        }
        for p in self.params.keys() {
            if !kernel::is_identifier(p) || p == "i" {
                return Err(cfg(format!("invalid parameter name `{p}`")));
            }
            if seen.contains(p.as_str()) {
                return Err(cfg(format!("parameter `{p}` shadows an accessor")));
            }
        }
        if !self.accessors.iter().any(|a| a.mode == AccessMode::Write) {
            return Err(cfg("needs at least one write accessor".into()));
        }
        let readable: Vec<&str> = self
            .accessors
            .iter()
            .filter(|a| a.mode == AccessMode::Read)
            .map(|a| a.name.as_str())
            .collect();
        let dims = global_range.dims();
        let mut body = Vec::new();
        for (idx, a) in self.accessors.iter().enumerate() {
            if a.mode != AccessMode::Write {
                continue;
            }
            let mut texts = self.bodies.iter().filter(|(n, _)| *n == a.name);
            let Some((_, text)) = texts.next() else {
                return Err(cfg(format!("write accessor `{}` has no body", a.name)));
            };
            if texts.next().is_some() {
                return Err(cfg(format!("write accessor `{}` has two bodies", a.name)));
            }
            let expr = kernel::parse_kernel(text, &readable, &self.params, dims).map_err(|e| {
                Error::Parse {
                    task: name.clone(),
                    accessor: a.name.clone(),
                    source: e,
                }
            })?;
            body.push(KernelBody { accessor: idx, expr });
        }
        for (n, _) in &self.bodies {
            if !self
                .accessors
                .iter()
                .any(|a| &a.name == n && a.mode == AccessMode::Write)
            {
                return Err(cfg(format!("body given for `{n}`, which is not a write accessor")));
            }
        }
        Ok(Task {
            name,
            global_range,
            accessors: self.accessors,
            body,
            params: self.params,
            beta: self.beta,
            target: self.target,
        })
    }
}
