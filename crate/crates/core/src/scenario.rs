//! JSON scenario files: cluster description, buffers, tasks and optional
//! expected results.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::{Cluster, LinkModel};
use crate::energy::{DeviceModel, EnergyTarget};
use crate::error::{Error, Result};
use crate::graph::TaskGraph;
use crate::model::{AccessMode, BufferId, BufferInit, ElementKind, RangeMapper, Scalar, Storage, TaskBuilder};
use crate::region::{GridBox, Region};
use crate::simulator::{fmt_point, Mismatch};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default = "one")]
    nodes: usize,
    #[serde(default = "max_perf")]
    queue_target: EnergyTarget,
    devices: Vec<DeviceModel>,
    #[serde(default)]
    link: LinkModel,
    #[serde(default)]
    buffers: Vec<BufferDecl>,
    #[serde(default)]
    tasks: Vec<TaskDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    expectations: Vec<ExpectationDecl>,
}

fn one() -> usize {
    1
}

fn max_perf() -> EnergyTarget {
    EnergyTarget::MaxPerf
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindDecl {
    Float64,
    Int64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum InitDecl {
    None,
    #[default]
    Zeros,
    Iota,
    Constant(f64),
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BufferDecl {
    name: String,
    kind: KindDecl,
    extent: Vec<u64>,
    #[serde(default)]
    init: InitDecl,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModeDecl {
    Read,
    Write,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum MapperDecl {
    #[default]
    OneToOne,
    Neighborhood(Vec<u64>),
    Fixed(Vec<GridBox>),
    All,
    Slice(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AccessorDecl {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    buffer: String,
    mode: ModeDecl,
    #[serde(default)]
    mapper: MapperDecl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskDecl {
    name: String,
    range: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    offset: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    params: BTreeMap<String, f64>,
    #[serde(default)]
    beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<EnergyTarget>,
    accessors: Vec<AccessorDecl>,
    body: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpectationDecl {
    buffer: String,
    values: Vec<f64>,
}

/// Expected final contents of one buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Expectation {
    pub buffer: BufferId,
    pub values: Vec<f64>,
}

/// A fully validated scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub nodes: usize,
    pub queue_target: EnergyTarget,
    /// One model per node, or a single model used by every node.
    pub devices: Vec<DeviceModel>,
    pub link: LinkModel,
    pub graph: TaskGraph,
    pub expectations: Vec<Expectation>,
}

fn mapper_from(decl: &MapperDecl, field: &str) -> Result<RangeMapper> {
    Ok(match decl {
        MapperDecl::OneToOne => RangeMapper::OneToOne,
        MapperDecl::Neighborhood(r) => RangeMapper::Neighborhood(r.clone()),
        MapperDecl::All => RangeMapper::All,
        MapperDecl::Slice(d) => RangeMapper::Slice(*d),
        MapperDecl::Fixed(boxes) => {
            let dims = boxes
                .first()
                .map(GridBox::dims)
                .ok_or_else(|| Error::scenario(field, "fixed mapper needs at least one box"))?;
            RangeMapper::Fixed(Region::from_boxes(dims, boxes.iter().copied()).map_err(|e| Error::scenario(field, e))?)
        }
    })
}

fn mapper_decl(m: &RangeMapper) -> MapperDecl {
    match m {
        RangeMapper::OneToOne => MapperDecl::OneToOne,
        RangeMapper::Neighborhood(r) => MapperDecl::Neighborhood(r.clone()),
        RangeMapper::All => MapperDecl::All,
        RangeMapper::Slice(d) => MapperDecl::Slice(*d),
        RangeMapper::Fixed(r) => MapperDecl::Fixed(r.boxes().to_vec()),
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "scenario".to_string() } else { path };
            Error::scenario(field, e.into_inner())
        })?;
        Scenario::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Scenario::from_json(&text)
    }

    fn from_file(f: ScenarioFile) -> Result<Scenario> {
        if f.nodes == 0 {
            return Err(Error::scenario("nodes", "must be at least 1"));
        }
        if f.devices.is_empty() {
            return Err(Error::scenario("devices", "at least one device model is required"));
        }
        if f.devices.len() != 1 && f.devices.len() != f.nodes {
            return Err(Error::scenario(
                "devices",
                format!("expected 1 or {} device models, found {}", f.nodes, f.devices.len()),
            ));
        }
        for (i, d) in f.devices.iter().enumerate() {
            d.validate().map_err(|e| Error::scenario(format!("devices[{i}]"), e))?;
        }
        f.link.validate().map_err(|e| Error::scenario("link", e))?;

        let mut graph = TaskGraph::new();
        for (i, b) in f.buffers.iter().enumerate() {
            let kind = match b.kind {
                KindDecl::Float64 => ElementKind::Float64,
                KindDecl::Int64 => ElementKind::Int64,
            };
            let init = match &b.init {
                InitDecl::None => BufferInit::Uninitialized,
                InitDecl::Zeros => BufferInit::Zeros,
                InitDecl::Iota => BufferInit::Iota,
                InitDecl::Constant(v) => BufferInit::Constant(*v),
                InitDecl::Values(v) => BufferInit::Values(v.clone()),
            };
            graph
                .create_buffer(b.name.clone(), &b.extent, kind, init)
                .map_err(|e| Error::scenario(format!("buffers[{i}]"), e))?;
        }

        for (i, t) in f.tasks.iter().enumerate() {
            let field = format!("tasks[{i}]");
            let mut builder = TaskBuilder::new(t.name.clone(), &t.range).beta(t.beta).target(t.target);
            if let Some(off) = &t.offset {
                builder = builder.offset(off);
            }
            for (name, v) in &t.params {
                builder = builder.param(name.clone(), *v);
            }
            for (j, a) in t.accessors.iter().enumerate() {
                let afield = format!("{field}.accessors[{j}]");
                let buffer = graph
                    .buffer_by_name(&a.buffer)
                    .ok_or_else(|| Error::scenario(format!("{afield}.buffer"), format!("unknown buffer `{}`", a.buffer)))?
                    .id;
                let mode = match a.mode {
                    ModeDecl::Read => AccessMode::Read,
                    ModeDecl::Write => AccessMode::Write,
                };
                let mapper = mapper_from(&a.mapper, &format!("{afield}.mapper"))?;
                let name = a.name.clone().unwrap_or_else(|| a.buffer.clone());
                builder = builder.accessor(name, buffer, mode, mapper);
            }
            for (acc, text) in &t.body {
                builder = builder.body(acc.clone(), text.clone());
            }
            let task = builder.build().map_err(|e| {
                let at = match &e {
                    Error::Parse { accessor, .. } => format!("{field}.body.{accessor}"),
                    _ => field.clone(),
                };
                Error::scenario(at, e)
            })?;
            graph.submit(task).map_err(|e| Error::scenario(field.clone(), e))?;
        }

        let mut expectations = Vec::new();
        for (i, x) in f.expectations.iter().enumerate() {
            let field = format!("expectations[{i}]");
            let b = graph
                .buffer_by_name(&x.buffer)
                .ok_or_else(|| Error::scenario(format!("{field}.buffer"), format!("unknown buffer `{}`", x.buffer)))?;
            if x.values.len() != b.len() {
                return Err(Error::scenario(
                    format!("{field}.values"),
                    format!("expected {} values for buffer `{}`, found {}", b.len(), b.name, x.values.len()),
                ));
            }
            if b.kind == ElementKind::Int64 && x.values.iter().any(|v| v.fract() != 0.0) {
                return Err(Error::scenario(format!("{field}.values"), "int64 expectations must be integers"));
            }
            expectations.push(Expectation {
                buffer: b.id,
                values: x.values.clone(),
            });
        }

        Ok(Scenario {
            nodes: f.nodes,
            queue_target: f.queue_target,
            devices: f.devices,
            link: f.link,
            graph,
            expectations,
        })
    }

    fn to_file(&self) -> ScenarioFile {
        let buffers = self
            .graph
            .buffers()
            .iter()
            .map(|b| BufferDecl {
                name: b.name.clone(),
                kind: match b.kind {
                    ElementKind::Float64 => KindDecl::Float64,
                    ElementKind::Int64 => KindDecl::Int64,
                },
                extent: b.extent.hi().iter().map(|&h| h as u64).collect(),
                init: match &b.init {
                    BufferInit::Uninitialized => InitDecl::None,
                    BufferInit::Zeros => InitDecl::Zeros,
                    BufferInit::Iota => InitDecl::Iota,
                    BufferInit::Constant(v) => InitDecl::Constant(*v),
                    BufferInit::Values(v) => InitDecl::Values(v.clone()),
                },
            })
            .collect();
        let tasks = self
            .graph
            .tasks()
            .map(|(_, t)| {
                let lo = t.global_range.lo();
                let offset = lo.iter().any(|&l| l != 0).then(|| lo.iter().map(|&l| l as u64).collect());
                TaskDecl {
                    name: t.name.clone(),
                    range: (0..t.dims()).map(|k| t.global_range.len(k)).collect(),
                    offset,
                    params: t.params.clone(),
                    beta: t.beta,
                    target: t.target,
                    accessors: t
                        .accessors
                        .iter()
                        .map(|a| AccessorDecl {
                            name: Some(a.name.clone()),
                            buffer: self.graph.buffer(a.buffer).name.clone(),
                            mode: match a.mode {
                                AccessMode::Read => ModeDecl::Read,
                                AccessMode::Write => ModeDecl::Write,
                            },
                            mapper: mapper_decl(&a.mapper),
                        })
                        .collect(),
                    body: t
                        .body
                        .iter()
                        .map(|b| (t.accessors[b.accessor].name.clone(), b.expr.to_string()))
                        .collect(),
                }
            })
            .collect();
        ScenarioFile {
            nodes: self.nodes,
            queue_target: self.queue_target,
            devices: self.devices.clone(),
            link: self.link.clone(),
            buffers,
            tasks,
            expectations: self
                .expectations
                .iter()
                .map(|x| ExpectationDecl {
                    buffer: self.graph.buffer(x.buffer).name.clone(),
                    values: x.values.clone(),
                })
                .collect(),
        }
    }

    /// Pretty JSON that loads back into an identical scenario.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("scenario serializes");
        s.push('\n');
        s
    }

    /// The cluster for `nodes` nodes (the scenario's own count when `None`).
    pub fn cluster(&self, nodes: Option<usize>) -> Result<Cluster> {
        let n = nodes.unwrap_or(self.nodes);
        if n == 0 {
            return Err(Error::Usage("node count must be at least 1".into()));
        }
        let devices = match self.devices.as_slice() {
            [one] => vec![one.clone(); n],
            many if many.len() == n => many.to_vec(),
            many => {
                return Err(Error::Usage(format!(
                    "scenario lists {} device models; {n} nodes need 1 or {n}",
                    many.len()
                )))
            }
        };
        Cluster::new(devices, self.link.clone())
    }

    /// First element where `buffers` disagrees with the expectations.
    pub fn check_expectations(&self, buffers: &[Storage]) -> Option<Mismatch> {
        for x in &self.expectations {
            let b = self.graph.buffer(x.buffer);
            let got = &buffers[x.buffer.0];
            for ((i, p), &want) in b.extent.points().enumerate().zip(&x.values) {
                let actual = got.get(i);
                let ok = match actual {
                    Scalar::F64(v) => v == want || (v.is_nan() && want.is_nan()),
                    Scalar::I64(v) => v as f64 == want,
                };
                if !ok {
                    let expected = match b.kind {
                        ElementKind::Float64 => Scalar::F64(want),
                        ElementKind::Int64 => Scalar::I64(want as i64),
                    };
                    return Some(Mismatch {
                        buffer: b.name.clone(),
                        index: fmt_point(&p, b.dims()),
                        expected,
                        actual,
                    });
                }
            }
        }
        None
    }
}
