use serde::{Deserialize, Serialize};

use crate::inventory::{Inventory, RfPath};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ComputeSpec {
    pub ram_gb: u64,
    pub storage_gb: u64,
    pub vm_lifetime_s: u64,
    pub cpu_threads: u32,
    pub cpu_cores: u32,
    pub software: Vec<String>,
}

impl ComputeSpec {
    pub fn is_empty(&self) -> bool {
        self.ram_gb == 0 && self.storage_gb == 0 && self.cpu_cores == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub center_hz: f64,
    pub bw_hz: f64,
}

impl Channel {
    pub fn low_hz(&self) -> f64 {
        self.center_hz - self.bw_hz / 2.0
    }

    pub fn high_hz(&self) -> f64 {
        self.center_hz + self.bw_hz / 2.0
    }

    /// Open-interval overlap: channels that only touch do not overlap.
    pub fn overlaps(&self, other: &Channel) -> bool {
        self.low_hz() < other.high_hz() && other.low_hz() < self.high_hz()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioSpec {
    pub n_usrps: u32,
    pub channels: Vec<Channel>,
    pub path: RfPath,
}

impl Default for RadioSpec {
    fn default() -> Self {
        RadioSpec {
            n_usrps: 0,
            channels: Vec::new(),
            path: RfPath::OverTheAir,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSpec {
    pub requested_bps: f64,
}

/// Everything a researcher can ask for: compute, radio and network.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ResourceSpec {
    pub compute: ComputeSpec,
    pub radio: RadioSpec,
    pub network: NetworkSpec,
}

/// Why a spec was refused at request time.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecRejection {
    #[error("SpecError: {field}: {reason}")]
    Spec { field: String, reason: String },
    #[error("LicenseError: channel {index} ({low_hz} Hz to {high_hz} Hz) is outside the licensed bands")]
    License { index: usize, low_hz: f64, high_hz: f64 },
    #[error("CapacityError: {class}: requested {requested} of {available}")]
    Capacity {
        class: String,
        requested: f64,
        available: f64,
    },
}

fn spec_err(field: impl Into<String>, reason: impl Into<String>) -> SpecRejection {
    SpecRejection::Spec {
        field: field.into(),
        reason: reason.into(),
    }
}

impl ResourceSpec {
    pub fn single_radio(path: RfPath, channels: Vec<Channel>) -> ResourceSpec {
        ResourceSpec {
            radio: RadioSpec {
                n_usrps: 1,
                channels,
                path,
            },
            ..ResourceSpec::default()
        }
    }

    /// Validates the requested resources against the inventory, independent of time.
    pub fn validate(&self, inv: &Inventory) -> Result<(), SpecRejection> {
        for (i, label) in self.compute.software.iter().enumerate() {
            if !inv.software_catalog.iter().any(|s| s == label) {
                return Err(spec_err(
                    format!("compute.software[{i}]"),
                    format!("unknown package {label:?}"),
                ));
            }
        }
        let bps = self.network.requested_bps;
        if !(bps.is_finite() && bps >= 0.0) {
            return Err(spec_err("network.requested_bps", "must be a finite value >= 0"));
        }
        if !self.radio.channels.is_empty() && self.radio.n_usrps == 0 {
            return Err(spec_err("radio.n_usrps", "channels require at least one radio"));
        }
        for (i, ch) in self.radio.channels.iter().enumerate() {
            if !(ch.bw_hz.is_finite() && ch.bw_hz > 0.0) {
                return Err(spec_err(format!("radio.channels[{i}].bw_hz"), "must be > 0"));
            }
            if !(ch.center_hz.is_finite() && ch.center_hz > 0.0) {
                return Err(spec_err(format!("radio.channels[{i}].center_hz"), "must be > 0"));
            }
            if ch.low_hz() <= 0.0 {
                return Err(spec_err(
                    format!("radio.channels[{i}].bw_hz"),
                    "channel extends below 0 Hz",
                ));
            }
        }
        match self.radio.path {
            RfPath::OverTheAir => {
                for (i, ch) in self.radio.channels.iter().enumerate() {
                    if !inv.licensed_covers(ch.low_hz(), ch.high_hz()) {
                        return Err(SpecRejection::License {
                            index: i,
                            low_hz: ch.low_hz(),
                            high_hz: ch.high_hz(),
                        });
                    }
                }
            }
            RfPath::Emulator => {
                let max = inv.max_center_freq_hz(RfPath::Emulator).unwrap_or(0.0);
                for (i, ch) in self.radio.channels.iter().enumerate() {
                    if ch.center_hz > max {
                        return Err(spec_err(
                            format!("radio.channels[{i}].center_hz"),
                            format!("above the emulator radios' {max} Hz tuning limit"),
                        ));
                    }
                }
            }
        }
        self.check_capacity(inv)
    }

    fn check_capacity(&self, inv: &Inventory) -> Result<(), SpecRejection> {
        let cap = |class: &str, requested: f64, available: f64| {
            if requested > available {
                Err(SpecRejection::Capacity {
                    class: class.into(),
                    requested,
                    available,
                })
            } else {
                Ok(())
            }
        };
        let pool = inv.devices_on(self.radio.path).count();
        cap("devices", self.radio.n_usrps as f64, pool as f64)?;
        let node_bw = inv.node_bandwidths().values().copied().fold(0.0, f64::max);
        for ch in &self.radio.channels {
            cap("spectrum", ch.bw_hz, node_bw)?;
        }
        let total_cores: u64 = inv.compute_nodes.iter().map(|n| n.cores as u64).sum();
        let total_ram: u64 = inv.compute_nodes.iter().map(|n| n.ram_gb).sum();
        let total_storage: u64 = inv.compute_nodes.iter().map(|n| n.storage_gb).sum();
        cap("cores", self.compute.cpu_cores as f64, total_cores as f64)?;
        cap("ram_gb", self.compute.ram_gb as f64, total_ram as f64)?;
        cap("storage_gb", self.compute.storage_gb as f64, total_storage as f64)?;
        cap("network_bps", self.network.requested_bps, inv.fabric.capacity_bps())?;
        Ok(())
    }
}
