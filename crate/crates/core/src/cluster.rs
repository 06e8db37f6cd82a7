use serde::{Deserialize, Serialize};

use crate::energy::DeviceModel;
use crate::error::{Error, Result};

/// Point-to-point interconnect model: every transfer takes
/// `latency_s + bytes / bandwidth_bytes_per_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkModel {
    pub latency_s: f64,
    pub bandwidth_bytes_per_s: f64,
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.latency_s >= 0.0 && self.latency_s.is_finite()) {
            return Err(Error::Config("link latency must be finite and non-negative".into()));
        }
        if self.bandwidth_bytes_per_s.is_nan() || self.bandwidth_bytes_per_s <= 0.0 {
            return Err(Error::Config("link bandwidth must be positive".into()));
        }
        Ok(())
    }

    pub fn transfer_time(&self, bytes: u64) -> f64 {
        self.latency_s + bytes as f64 / self.bandwidth_bytes_per_s
    }
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            latency_s: 1e-6,
            bandwidth_bytes_per_s: 1e10,
        }
    }
}

/// One device per node plus the link connecting them.
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    devices: Vec<DeviceModel>,
    link: LinkModel,
}

impl Cluster {
    pub fn new(devices: Vec<DeviceModel>, link: LinkModel) -> Result<Self> {
        if devices.is_empty() {
            return Err(Error::Config("a cluster needs at least one node".into()));
        }
        for (n, d) in devices.iter().enumerate() {
            d.validate()
                .map_err(|e| Error::Config(format!("node {n}: {e}")))?;
        }
        link.validate()?;
        Ok(Cluster { devices, link })
    }

    /// `nodes` copies of `device`.
    pub fn uniform(device: DeviceModel, nodes: usize, link: LinkModel) -> Result<Self> {
        Cluster::new(vec![device; nodes], link)
    }

    pub fn node_count(&self) -> usize {
        self.devices.len()
    }

    pub fn devices(&self) -> &[DeviceModel] {
        &self.devices
    }

    pub fn device(&self, node: usize) -> &DeviceModel {
        &self.devices[node]
    }

    pub fn link(&self) -> &LinkModel {
        &self.link
    }
}
