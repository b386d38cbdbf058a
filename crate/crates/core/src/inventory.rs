//! The static resource pool: radios, compute hosts, the switch fabric and the
//! licensed spectrum every reservation is carved out of.
//!
//! An [`Inventory`] is loaded once from a TOML document, validated, and then
//! treated as immutable. Omitted per-device and per-host fields take the
//! testbed defaults (X310 radios with two 160 MHz daughterboards, dual
//! 12-core 3.0 GHz hosts with 128 GB RAM, a 96-port 10 GbE switch).

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// The inventory document shipped with the repository.
pub const TESTBED_TOML: &str = include_str!("../data/testbed.toml");

#[derive(Debug, thiserror::Error)]
pub enum InventoryError {
    #[error("ParseError: {0}")]
    Parse(String),
    #[error("ValidationError: {field}: {reason}")]
    Validation { field: String, reason: String },
    #[error("io error reading inventory: {0}")]
    Io(#[from] std::io::Error),
}

impl InventoryError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        InventoryError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// How a radio's antenna ports are connected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RfPath {
    OverTheAir,
    Emulator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdrDevice {
    pub id: String,
    /// Physical node (dual-radio head) the device is mounted in.
    pub node_id: String,
    pub attachment: RfPath,
    #[serde(default = "defaults::daughterboards")]
    pub daughterboards: u32,
    #[serde(default = "defaults::max_center_freq_hz")]
    pub max_center_freq_hz: f64,
    /// Instantaneous bandwidth of one daughterboard.
    #[serde(default = "defaults::max_instant_bw_hz")]
    pub max_instant_bw_hz: f64,
    #[serde(default = "defaults::chains")]
    pub tx_chains: u32,
    #[serde(default = "defaults::chains")]
    pub rx_chains: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeNode {
    pub id: String,
    #[serde(default = "defaults::cores")]
    pub cores: u32,
    #[serde(default = "defaults::clock_ghz")]
    pub clock_ghz: f64,
    #[serde(default = "defaults::ram_gb")]
    pub ram_gb: u64,
    #[serde(default = "defaults::ram_max_gb")]
    pub ram_max_gb: u64,
    #[serde(default = "defaults::storage_gb")]
    pub storage_gb: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFabric {
    #[serde(default = "defaults::ports")]
    pub ports: u32,
    #[serde(default = "defaults::port_rate_bps")]
    pub port_rate_bps: f64,
    #[serde(default = "defaults::base_latency_ns")]
    pub base_latency_ns: u64,
}

impl Default for NetworkFabric {
    fn default() -> Self {
        NetworkFabric {
            ports: defaults::ports(),
            port_rate_bps: defaults::port_rate_bps(),
            base_latency_ns: defaults::base_latency_ns(),
        }
    }
}

impl NetworkFabric {
    /// Aggregate switching capacity, every port at line rate.
    pub fn capacity_bps(&self) -> f64 {
        self.ports as f64 * self.port_rate_bps
    }
}

/// A licensed frequency range. Both edges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LicensedBand {
    pub low_hz: f64,
    pub high_hz: f64,
    pub label: String,
}

impl LicensedBand {
    pub fn contains(&self, f_hz: f64) -> bool {
        self.low_hz <= f_hz && f_hz <= self.high_hz
    }
}

mod defaults {
    pub fn daughterboards() -> u32 {
        2
    }
    pub fn max_center_freq_hz() -> f64 {
        6.0e9
    }
    pub fn max_instant_bw_hz() -> f64 {
        160.0e6
    }
    pub fn chains() -> u32 {
        2
    }
    pub fn cores() -> u32 {
        24
    }
    pub fn clock_ghz() -> f64 {
        3.0
    }
    pub fn ram_gb() -> u64 {
        128
    }
    pub fn ram_max_gb() -> u64 {
        1540
    }
    pub fn storage_gb() -> u64 {
        2000
    }
    pub fn ports() -> u32 {
        96
    }
    pub fn port_rate_bps() -> f64 {
        10.0e9
    }
    pub fn base_latency_ns() -> u64 {
        550
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Inventory {
    #[serde(default)]
    pub sdr_devices: Vec<SdrDevice>,
    #[serde(default)]
    pub compute_nodes: Vec<ComputeNode>,
    #[serde(default)]
    pub fabric: NetworkFabric,
    #[serde(default)]
    pub licensed_bands: Vec<LicensedBand>,
    #[serde(default)]
    pub software_catalog: Vec<String>,
}

/// Per-class totals over an inventory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CapacityReport {
    pub sdr_devices: u32,
    pub sdr_devices_ota: u32,
    pub sdr_devices_emulator: u32,
    pub radio_nodes: u32,
    pub compute_nodes: u32,
    pub total_cores: u64,
    pub total_ram_gb: u64,
    pub total_ram_max_gb: u64,
    pub total_storage_gb: u64,
    pub switch_ports: u32,
    pub fabric_capacity_bps: f64,
    /// Largest instantaneous bandwidth any single radio node can capture:
    /// the sum of its devices' bandwidths.
    pub total_instant_bw_per_dual_node_hz: f64,
    pub licensed_span_hz: f64,
}

/// Parses and validates an inventory document.
pub fn load_inventory(source: &str) -> Result<Inventory, InventoryError> {
    let inv: Inventory =
        toml::from_str(source).map_err(|e| InventoryError::Parse(e.to_string()))?;
    inv.validate()?;
    Ok(inv)
}

pub fn capacity_summary(inv: &Inventory) -> CapacityReport {
    let mut report = CapacityReport {
        sdr_devices: inv.sdr_devices.len() as u32,
        compute_nodes: inv.compute_nodes.len() as u32,
        switch_ports: inv.fabric.ports,
        fabric_capacity_bps: inv.fabric.capacity_bps(),
        ..CapacityReport::default()
    };
    for dev in &inv.sdr_devices {
        match dev.attachment {
            RfPath::OverTheAir => report.sdr_devices_ota += 1,
            RfPath::Emulator => report.sdr_devices_emulator += 1,
        }
    }
    let node_bw = inv.node_bandwidths();
    report.radio_nodes = node_bw.len() as u32;
    report.total_instant_bw_per_dual_node_hz = node_bw.values().copied().fold(0.0, f64::max);
    for node in &inv.compute_nodes {
        report.total_cores += node.cores as u64;
        report.total_ram_gb += node.ram_gb;
        report.total_ram_max_gb += node.ram_max_gb;
        report.total_storage_gb += node.storage_gb;
    }
    report.licensed_span_hz = inv.licensed_bands.iter().map(|b| b.high_hz - b.low_hz).sum();
    report
}

/// First licensed band (in declaration order) containing `f_hz`.
pub fn band_containing(inv: &Inventory, f_hz: f64) -> Option<&LicensedBand> {
    inv.licensed_bands.iter().find(|b| b.contains(f_hz))
}

impl Inventory {
    /// The inventory shipped in `data/testbed.toml`.
    pub fn testbed_default() -> Inventory {
        load_inventory(TESTBED_TOML).expect("bundled inventory is valid")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Inventory, InventoryError> {
        let text = std::fs::read_to_string(path)?;
        load_inventory(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("inventory serializes")
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("inventory serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn device(&self, id: &str) -> Option<&SdrDevice> {
        self.sdr_devices.iter().find(|d| d.id == id)
    }

    pub fn compute_node(&self, id: &str) -> Option<&ComputeNode> {
        self.compute_nodes.iter().find(|n| n.id == id)
    }

    pub fn devices_on(&self, path: RfPath) -> impl Iterator<Item = &SdrDevice> {
        self.sdr_devices.iter().filter(move |d| d.attachment == path)
    }

    /// Summed instantaneous bandwidth per radio node, keyed by node id.
    pub fn node_bandwidths(&self) -> BTreeMap<&str, f64> {
        let mut out = BTreeMap::new();
        for dev in &self.sdr_devices {
            *out.entry(dev.node_id.as_str()).or_insert(0.0) += dev.max_instant_bw_hz;
        }
        out
    }

    /// Highest center frequency any device on `path` can tune to.
    pub fn max_center_freq_hz(&self, path: RfPath) -> Option<f64> {
        self.devices_on(path)
            .map(|d| d.max_center_freq_hz)
            .reduce(f64::max)
    }

    /// True when `[low, high]` is covered by the union of licensed bands.
    /// Adjacent or overlapping bands are merged before the check.
    pub fn licensed_covers(&self, low_hz: f64, high_hz: f64) -> bool {
        let mut bands: Vec<(f64, f64)> = self
            .licensed_bands
            .iter()
            .map(|b| (b.low_hz, b.high_hz))
            .collect();
        bands.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(bands.len());
        for (lo, hi) in bands {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        merged.iter().any(|&(lo, hi)| lo <= low_hz && high_hz <= hi)
    }

    pub fn validate(&self) -> Result<(), InventoryError> {
        let mut ids = HashSet::new();
        let mut per_node: BTreeMap<&str, u32> = BTreeMap::new();
        for (i, dev) in self.sdr_devices.iter().enumerate() {
            let at = |f: &str| format!("sdr_devices[{i}].{f}");
            if dev.id.is_empty() {
                return Err(InventoryError::invalid(at("id"), "empty id"));
            }
            if !ids.insert(dev.id.as_str()) {
                return Err(InventoryError::invalid(at("id"), format!("duplicate id {:?}", dev.id)));
            }
            if !(dev.max_instant_bw_hz.is_finite() && dev.max_instant_bw_hz > 0.0) {
                return Err(InventoryError::invalid(at("max_instant_bw_hz"), "must be > 0"));
            }
            if !(dev.max_center_freq_hz.is_finite()
                && dev.max_center_freq_hz > dev.max_instant_bw_hz / 2.0)
            {
                return Err(InventoryError::invalid(
                    at("max_center_freq_hz"),
                    "must exceed half the instantaneous bandwidth",
                ));
            }
            if dev.daughterboards < 1 {
                return Err(InventoryError::invalid(at("daughterboards"), "must be >= 1"));
            }
            let count = per_node.entry(dev.node_id.as_str()).or_insert(0);
            *count += 1;
            if *count > 2 {
                return Err(InventoryError::invalid(
                    at("node_id"),
                    format!("node {:?} already holds two devices", dev.node_id),
                ));
            }
        }
        for (i, node) in self.compute_nodes.iter().enumerate() {
            let at = |f: &str| format!("compute_nodes[{i}].{f}");
            if node.id.is_empty() {
                return Err(InventoryError::invalid(at("id"), "empty id"));
            }
            if !ids.insert(node.id.as_str()) {
                return Err(InventoryError::invalid(at("id"), format!("duplicate id {:?}", node.id)));
            }
            if node.cores < 1 {
                return Err(InventoryError::invalid(at("cores"), "must be >= 1"));
            }
            if node.ram_gb > node.ram_max_gb {
                return Err(InventoryError::invalid(at("ram_gb"), "exceeds ram_max_gb"));
            }
            if !(node.clock_ghz.is_finite() && node.clock_ghz > 0.0) {
                return Err(InventoryError::invalid(at("clock_ghz"), "must be > 0"));
            }
        }
        if self.fabric.ports < 1 {
            return Err(InventoryError::invalid("fabric.ports", "must be >= 1"));
        }
        if !(self.fabric.port_rate_bps.is_finite() && self.fabric.port_rate_bps > 0.0) {
            return Err(InventoryError::invalid("fabric.port_rate_bps", "must be > 0"));
        }
        for (i, band) in self.licensed_bands.iter().enumerate() {
            if !(band.low_hz.is_finite() && band.high_hz.is_finite() && band.low_hz < band.high_hz)
            {
                return Err(InventoryError::invalid(
                    format!("licensed_bands[{i}].low_hz"),
                    "low_hz must be below high_hz",
                ));
            }
        }
        let mut labels = HashSet::new();
        for (i, label) in self.software_catalog.iter().enumerate() {
            if !labels.insert(label.as_str()) {
                return Err(InventoryError::invalid(
                    format!("software_catalog[{i}]"),
                    format!("duplicate label {label:?}"),
                ));
            }
        }
        Ok(())
    }
}
