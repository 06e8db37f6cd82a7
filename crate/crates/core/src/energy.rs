//! Simulated device power models, energy-target driven frequency selection,
//! and per-kernel / per-device energy accounting.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskId;
use crate::trace::{TraceEvent, TraceKind};

/// What the frequency governor optimizes for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnergyTarget {
    #[serde(rename = "MAX_PERF")]
    MaxPerf,
    #[serde(rename = "MIN_ENERGY")]
    MinEnergy,
    #[serde(rename = "MIN_EDP")]
    MinEdp,
    #[serde(rename = "MIN_ED2P")]
    MinEd2p,
}

impl EnergyTarget {
    pub const ALL: [EnergyTarget; 4] = [
        EnergyTarget::MaxPerf,
        EnergyTarget::MinEnergy,
        EnergyTarget::MinEdp,
        EnergyTarget::MinEd2p,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnergyTarget::MaxPerf => "MAX_PERF",
            EnergyTarget::MinEnergy => "MIN_ENERGY",
            EnergyTarget::MinEdp => "MIN_EDP",
            EnergyTarget::MinEd2p => "MIN_ED2P",
        }
    }

    /// Objective to minimize given energy (J) and time (s). `None` for
    /// `MaxPerf`, which is not an optimization.
    pub fn objective(self, energy: f64, time: f64) -> Option<f64> {
        match self {
            EnergyTarget::MaxPerf => None,
            EnergyTarget::MinEnergy => Some(energy),
            EnergyTarget::MinEdp => Some(energy * time),
            EnergyTarget::MinEd2p => Some(energy * time * time),
        }
    }
}

impl fmt::Display for EnergyTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnergyTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EnergyTarget::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown energy target `{s}` (expected MAX_PERF, MIN_ENERGY, MIN_EDP or MIN_ED2P)"))
    }
}

/// Per-task override wins over the queue-wide target.
pub fn resolve_target(queue_target: EnergyTarget, task_override: Option<EnergyTarget>) -> EnergyTarget {
    task_override.unwrap_or(queue_target)
}

/// Power and speed model of one simulated accelerator.
///
/// Power at frequency `f` is `p_static_w + p_dyn_ref_w * (f / f_ref_ghz)^alpha_exp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceModel {
    /// Available core frequencies in GHz, strictly ascending.
    pub frequencies_ghz: Vec<f64>,
    pub f_ref_ghz: f64,
    pub p_static_w: f64,
    pub p_dyn_ref_w: f64,
    #[serde(default = "default_alpha")]
    pub alpha_exp: f64,
    /// Elements processed per second at `f_ref_ghz`.
    pub throughput_ref: f64,
}

fn default_alpha() -> f64 {
    3.0
}

impl DeviceModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("device model: {m}")));
        let levels = &self.frequencies_ghz;
        if levels.is_empty() {
            return bad("no frequency levels".into());
        }
        if levels.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return bad("frequency levels must be finite and positive".into());
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return bad("frequency levels must be strictly ascending".into());
        }
        if !levels.contains(&self.f_ref_ghz) {
            return bad(format!("f_ref {} GHz is not one of the levels", self.f_ref_ghz));
        }
        if !(self.p_static_w >= 0.0 && self.p_static_w.is_finite()) {
            return bad("p_static_w must be finite and non-negative".into());
        }
        if !(self.p_dyn_ref_w >= 0.0 && self.p_dyn_ref_w.is_finite()) {
            return bad("p_dyn_ref_w must be finite and non-negative".into());
        }
        if !self.alpha_exp.is_finite() {
            return bad("alpha_exp must be finite".into());
        }
        if !(self.throughput_ref > 0.0 && self.throughput_ref.is_finite()) {
            return bad("throughput_ref must be finite and positive".into());
        }
        Ok(())
    }

    pub fn power(&self, f_ghz: f64) -> f64 {
        self.p_static_w + self.p_dyn_ref_w * (f_ghz / self.f_ref_ghz).powf(self.alpha_exp)
    }

    /// Kernel time at the reference frequency for `volume` elements.
    pub fn reference_time(&self, volume: u64) -> f64 {
        volume as f64 / self.throughput_ref
    }

    /// Kernel time at `f_ghz` for a kernel taking `t_ref` seconds at
    /// `f_ref`, of which the fraction `beta` does not scale with frequency.
    pub fn kernel_time(&self, t_ref: f64, beta: f64, f_ghz: f64) -> f64 {
        t_ref * (beta + (1.0 - beta) * (self.f_ref_ghz / f_ghz))
    }

    pub fn max_frequency(&self) -> f64 {
        *self.frequencies_ghz.last().expect("validated device has levels")
    }
}

/// Picks the frequency level for a chunk by exhaustive enumeration; ties go
/// to the higher frequency.
pub fn select_frequency(device: &DeviceModel, target: EnergyTarget, chunk_t_ref: f64, beta: f64) -> f64 {
    let mut best: Option<(f64, f64)> = None;
    for &f in &device.frequencies_ghz {
        let t = device.kernel_time(chunk_t_ref, beta, f);
        let e = device.power(f) * t;
        let Some(score) = target.objective(e, t) else {
            return device.max_frequency();
        };
        match best {
            Some((_, s)) if score > s => {}
            _ => best = Some((f, score)),
        }
    }
    best.map(|(f, _)| f).unwrap_or_else(|| device.max_frequency())
}

/// Exact floating-point accumulator: keeps the running sum as a list of
/// non-overlapping partials so that no rounding error is ever dropped.
#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut kept = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        self.partials.truncate(kept);
        if x != 0.0 {
            self.partials.push(x);
        }
    }

    pub fn add_sum(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    pub fn sub_sum(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(-p);
        }
    }

    /// The exact sum is zero.
    pub fn is_zero(&self) -> bool {
        self.partials.is_empty()
    }

    /// The sum rounded to `f64`.
    pub fn value(&self) -> f64 {
        let mut it = self.partials.iter().rev();
        let Some(&first) = it.next() else {
            return 0.0;
        };
        it.fold(first, |acc, &p| acc + p)
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskEnergy {
    pub task: TaskId,
    pub energy_j: f64,
    /// From the first chunk start to the last chunk finish.
    pub duration_s: f64,
    /// Chosen frequency per node; `None` where the task had no chunk.
    pub frequency_ghz_per_node: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviceEnergy {
    pub node: usize,
    pub energy_j: f64,
    pub busy_s: f64,
    pub idle_s: f64,
    pub busy_energy_j: f64,
    pub idle_energy_j: f64,
}

/// Fine-grained (per kernel) and coarse-grained (per device) energy of a run.
#[derive(Clone, Debug)]
pub struct EnergyReport {
    pub per_task: Vec<TaskEnergy>,
    pub per_device: Vec<DeviceEnergy>,
    pub total_kernel_energy_j: f64,
    pub total_idle_energy_j: f64,
    pub total_device_energy_j: f64,
    task_sums: Vec<ExactSum>,
    device_sums: Vec<ExactSum>,
    idle_terms: Vec<f64>,
}

impl EnergyReport {
    /// Σ kernel energies + Σ idle energies equals Σ device energies, in exact
    /// arithmetic over the recorded terms.
    pub fn is_balanced(&self) -> bool {
        let mut diff = ExactSum::new();
        for s in &self.task_sums {
            diff.add_sum(s);
        }
        for &i in &self.idle_terms {
            diff.add(i);
        }
        for s in &self.device_sums {
            diff.sub_sum(s);
        }
        diff.is_zero()
    }
}

/// Integrates the piecewise-constant power profile of a run.
///
/// Execute events draw `P(f)` for their duration; everything else (idle time
/// and time spent only on transfers) draws `p_static_w`.
pub fn account_energy(trace: &[TraceEvent], devices: &[DeviceModel], makespan: f64) -> Result<EnergyReport> {
    let nodes = devices.len();
    for e in trace {
        if e.node >= nodes {
            return Err(Error::Usage(format!(
                "trace event for command {} references unknown device {}",
                e.command.0, e.node
            )));
        }
    }
    let executes = || trace.iter().filter(|e| e.kind == TraceKind::Execute);
    let event_energy = |e: &TraceEvent| -> f64 {
        let f = e.frequency_ghz.unwrap_or(devices[e.node].f_ref_ghz);
        devices[e.node].power(f) * e.duration_s
    };

    // Fine-grained pass, grouped by task.
    struct Acc {
        sum: ExactSum,
        start: f64,
        finish: f64,
        freqs: Vec<Option<f64>>,
    }
    let mut tasks: BTreeMap<TaskId, Acc> = BTreeMap::new();
    for e in executes() {
        let task = e.task.ok_or_else(|| Error::Internal(format!("execute command {} has no task", e.command.0)))?;
        let acc = tasks.entry(task).or_insert_with(|| Acc {
            sum: ExactSum::new(),
            start: f64::INFINITY,
            finish: f64::NEG_INFINITY,
            freqs: vec![None; nodes],
        });
        acc.sum.add(event_energy(e));
        acc.start = acc.start.min(e.start_s);
        acc.finish = acc.finish.max(e.finish_s());
        acc.freqs[e.node] = e.frequency_ghz;
    }
    let mut per_task = Vec::new();
    let mut task_sums = Vec::new();
    for (task, acc) in tasks {
        per_task.push(TaskEnergy {
            task,
            energy_j: acc.sum.value(),
            duration_s: acc.finish - acc.start,
            frequency_ghz_per_node: acc.freqs,
        });
        task_sums.push(acc.sum);
    }

    // Coarse-grained pass, grouped by device.
    let mut per_device = Vec::new();
    let mut device_sums = Vec::new();
    let mut idle_terms = Vec::new();
    for (node, device) in devices.iter().enumerate() {
        let mut busy = ExactSum::new();
        let mut busy_s = ExactSum::new();
        for e in executes().filter(|e| e.node == node) {
            busy.add(event_energy(e));
            busy_s.add(e.duration_s);
        }
        let busy_s = busy_s.value();
        let idle_s = (makespan - busy_s).max(0.0);
        let idle_energy = device.p_static_w * idle_s;
        let mut total = busy.clone();
        total.add(idle_energy);
        per_device.push(DeviceEnergy {
            node,
            energy_j: total.value(),
            busy_s,
            idle_s,
            busy_energy_j: busy.value(),
            idle_energy_j: idle_energy,
        });
        device_sums.push(total);
        idle_terms.push(idle_energy);
    }

    let total_kernel: ExactSum = {
        let mut s = ExactSum::new();
        task_sums.iter().for_each(|t| s.add_sum(t));
        s
    };
    let total_device: ExactSum = {
        let mut s = ExactSum::new();
        device_sums.iter().for_each(|t| s.add_sum(t));
        s
    };
    Ok(EnergyReport {
        per_task,
        per_device,
        total_kernel_energy_j: total_kernel.value(),
        total_idle_energy_j: idle_terms.iter().copied().collect::<ExactSum>().value(),
        total_device_energy_j: total_device.value(),
        task_sums,
        device_sums,
        idle_terms,
    })
}
