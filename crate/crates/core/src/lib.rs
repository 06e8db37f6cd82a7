//! Deterministic logical-time simulator for range-mapped distributed task
//! scheduling with DVFS-aware energy accounting.

pub mod cluster;
pub mod energy;
pub mod error;
pub mod graph;
pub mod kernel;
pub mod model;
pub mod region;
pub mod report;
pub mod scenario;
pub mod scheduler;
pub mod simulator;
pub mod trace;

pub use cluster::{Cluster, LinkModel};
pub use energy::{DeviceModel, EnergyReport, EnergyTarget};
pub use error::{Error, Result};
pub use graph::TaskGraph;
pub use model::{BufferId, BufferInit, ElementKind, RangeMapper, Scalar, Storage, Task, TaskBuilder, TaskId};
pub use region::{GridBox, Region};
pub use scenario::Scenario;
pub use scheduler::{schedule, CommandGraph};
pub use simulator::{simulate, validate_against_serial, Mismatch, Simulation};
