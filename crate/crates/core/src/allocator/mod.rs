//! Binding admitted reservations to concrete resources.
//!
//! The [`Allocator`] tracks which radios, host capacity, spectrum slots and
//! switch bandwidth are held by live allocations. Binding is split into a
//! pure planning step and a commit so that the scheduler can journal the
//! exact allocation before applying it, and replay it verbatim later.

mod pipeline;
mod spectrum;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::inventory::{Inventory, RfPath};
use crate::scheduler::{ComputeSpec, Reservation, ReservationState, ResourceSpec};
use crate::ReservationId;

pub use pipeline::{place_pipeline, PipelineEdge, PipelineGraph, PipelinePlacement, PipelineTask};
pub use spectrum::{
    divisor_friendly_rate, guard_band, plan_spectrum_slots, throughput_check, SampleFormat,
    SlotRequest, SpectrumBlock, SpectrumSlot, Throughput, OVERSAMPLE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceClass {
    Devices,
    Compute,
    Spectrum,
    Network,
}

impl fmt::Display for ResourceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResourceClass::Devices => "devices",
            ResourceClass::Compute => "compute",
            ResourceClass::Spectrum => "spectrum",
            ResourceClass::Network => "network",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AllocError {
    #[error("AllocationError({class}): {detail}")]
    Exhausted { class: ResourceClass, detail: String },
    #[error("NoFitError: no room for {bw_hz} Hz: {reason}")]
    NoFit { bw_hz: f64, reason: String },
    #[error("PlacementError: {0}")]
    Placement(String),
    #[error("StateError: reservation {id} is {state:?}, expected Confirmed")]
    State { id: ReservationId, state: ReservationState },
}

impl AllocError {
    fn exhausted(class: ResourceClass, detail: impl Into<String>) -> AllocError {
        AllocError::Exhausted {
            class,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmPlacement {
    pub compute_node_id: String,
    pub cores: u32,
    pub ram_gb: u64,
    pub storage_gb: u64,
    pub lifetime_s: u64,
}

/// A slot together with the block it lives in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotBinding {
    pub node_id: String,
    pub block_center_hz: f64,
    pub block_bw_hz: f64,
    pub block_rate_sps: f64,
    pub slot: SpectrumSlot,
}

impl SlotBinding {
    /// Absolute RF center of the slot.
    pub fn center_hz(&self) -> f64 {
        self.block_center_hz + self.slot.offset_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub reservation_id: ReservationId,
    pub devices: Vec<String>,
    pub vm_placements: Vec<VmPlacement>,
    pub slots: Vec<SlotBinding>,
    pub network_bps_reserved: f64,
}

/// Held and free amounts for one resource class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccount {
    pub class: String,
    pub total: f64,
    pub held: f64,
    pub free: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct NodeUsage {
    cores: u32,
    ram_gb: u64,
    storage_gb: u64,
}

#[derive(Debug, Clone)]
pub struct Allocator {
    inventory: Arc<Inventory>,
    live: BTreeMap<ReservationId, Allocation>,
    blocks: BTreeMap<String, SpectrumBlock>,
    device_owner: BTreeMap<String, ReservationId>,
    /// Indexed like `inventory.compute_nodes`.
    node_used: Vec<NodeUsage>,
    network_reserved_bps: f64,
}

impl Allocator {
    pub fn new(inventory: Arc<Inventory>) -> Allocator {
        let node_used = vec![NodeUsage::default(); inventory.compute_nodes.len()];
        Allocator {
            inventory,
            live: BTreeMap::new(),
            blocks: BTreeMap::new(),
            device_owner: BTreeMap::new(),
            node_used,
            network_reserved_bps: 0.0,
        }
    }

    pub fn inventory(&self) -> &Arc<Inventory> {
        &self.inventory
    }

    pub fn live(&self) -> impl Iterator<Item = &Allocation> {
        self.live.values()
    }

    pub fn get(&self, id: &ReservationId) -> Option<&Allocation> {
        self.live.get(id)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &SpectrumBlock> {
        self.blocks.values()
    }

    pub fn block(&self, node_id: &str) -> Option<&SpectrumBlock> {
        self.blocks.get(node_id)
    }

    pub fn device_owner(&self, device_id: &str) -> Option<&ReservationId> {
        self.device_owner.get(device_id)
    }

    /// Plans and commits an allocation for a Confirmed reservation.
    pub fn bind(&mut self, res: &Reservation) -> Result<Allocation, AllocError> {
        let alloc = self.plan(res)?;
        self.commit(alloc.clone())
            .expect("a freshly planned allocation commits");
        Ok(alloc)
    }

    /// Computes the allocation `bind` would produce, leaving state untouched.
    pub fn plan(&self, res: &Reservation) -> Result<Allocation, AllocError> {
        if res.state != ReservationState::Confirmed {
            return Err(AllocError::State {
                id: res.id.clone(),
                state: res.state,
            });
        }
        self.plan_spec(&res.id, &res.spec)
    }

    pub fn plan_spec(&self, id: &ReservationId, spec: &ResourceSpec) -> Result<Allocation, AllocError> {
        if self.live.contains_key(id) {
            return Err(AllocError::Placement(format!("{id} already holds an allocation")));
        }
        let devices = self.pick_devices(spec.radio.n_usrps, spec.radio.path)?;
        let slots = self.plan_slots(id, spec, &devices)?;
        let mut used = self.node_used.clone();
        let vm_placements = place_compute(&self.inventory, &mut used, &spec.compute).ok_or_else(|| {
            AllocError::exhausted(
                ResourceClass::Compute,
                format!(
                    "{} cores / {} GB RAM / {} GB storage do not fit the free hosts",
                    spec.compute.cpu_cores, spec.compute.ram_gb, spec.compute.storage_gb
                ),
            )
        })?;
        let headroom = self.inventory.fabric.capacity_bps() - self.network_reserved_bps;
        if spec.network.requested_bps > headroom {
            return Err(AllocError::exhausted(
                ResourceClass::Network,
                format!(
                    "requested {} bps with {} bps of headroom",
                    spec.network.requested_bps, headroom
                ),
            ));
        }
        Ok(Allocation {
            reservation_id: id.clone(),
            devices,
            vm_placements,
            slots,
            network_bps_reserved: spec.network.requested_bps,
        })
    }

    /// Free devices on `path`, in inventory order.
    fn pick_devices(&self, n: u32, path: RfPath) -> Result<Vec<String>, AllocError> {
        let free: Vec<String> = self
            .inventory
            .devices_on(path)
            .filter(|d| !self.device_owner.contains_key(&d.id))
            .take(n as usize)
            .map(|d| d.id.clone())
            .collect();
        if free.len() < n as usize {
            let pool = self.inventory.devices_on(path).count();
            return Err(AllocError::exhausted(
                ResourceClass::Devices,
                format!("requested {n} {path:?} radios, {} of {pool} free", free.len()),
            ));
        }
        Ok(free)
    }

    fn plan_slots(
        &self,
        id: &ReservationId,
        spec: &ResourceSpec,
        devices: &[String],
    ) -> Result<Vec<SlotBinding>, AllocError> {
        let channels = &spec.radio.channels;
        if channels.is_empty() {
            return Ok(Vec::new());
        }
        let mut nodes: Vec<&str> = Vec::new();
        for dev in devices {
            let node = self.inventory.device(dev).expect("picked from inventory").node_id.as_str();
            if !nodes.contains(&node) {
                nodes.push(node);
            }
        }
        let node_bw = self.inventory.node_bandwidths();
        let span_lo = channels.iter().map(|c| c.low_hz()).fold(f64::INFINITY, f64::min);
        let span_hi = channels.iter().map(|c| c.high_hz()).fold(f64::NEG_INFINITY, f64::max);

        let mut scratch: BTreeMap<&str, SpectrumBlock> = BTreeMap::new();
        let mut out = Vec::with_capacity(channels.len());
        for (ci, ch) in channels.iter().enumerate() {
            let mut placed = None;
            let mut last_err = None;
            for (ni, &node) in nodes.iter().enumerate() {
                let block = scratch.entry(node).or_insert_with(|| {
                    self.blocks.get(node).cloned().unwrap_or_else(|| {
                        // A fresh block on the first node is centered on the
                        // whole channel span; later nodes on the channel itself.
                        let center = if ni == 0 { (span_lo + span_hi) / 2.0 } else { ch.center_hz };
                        SpectrumBlock::new(node, center, node_bw[node])
                    })
                });
                let offset = ch.center_hz - block.center_hz;
                let request = SlotRequest {
                    bw_hz: ch.bw_hz,
                    preferred_offset_hz: Some(offset),
                    owner: id.clone(),
                };
                let result = match spec.radio.path {
                    // Licensed emissions stay exactly where they were admitted.
                    RfPath::OverTheAir => {
                        if block.fits(offset, ch.bw_hz) {
                            plan_spectrum_slots(block, &request)
                        } else {
                            Err(AllocError::NoFit {
                                bw_hz: ch.bw_hz,
                                reason: format!("{} Hz is not free in the {node} block", ch.center_hz),
                            })
                        }
                    }
                    RfPath::Emulator => plan_spectrum_slots(block, &request),
                };
                match result {
                    Ok(slot) => {
                        block.slots.push(slot.clone());
                        placed = Some(SlotBinding {
                            node_id: node.to_owned(),
                            block_center_hz: block.center_hz,
                            block_bw_hz: block.block_bw_hz,
                            block_rate_sps: block.sample_rate_sps,
                            slot,
                        });
                        break;
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            match placed {
                Some(b) => out.push(b),
                None => {
                    return Err(AllocError::exhausted(
                        ResourceClass::Spectrum,
                        format!(
                            "channel {ci} ({} Hz wide): {}",
                            ch.bw_hz,
                            last_err.map(|e| e.to_string()).unwrap_or_default()
                        ),
                    ))
                }
            }
        }
        Ok(out)
    }

    /// Applies a planned (or journaled) allocation.
    pub fn commit(&mut self, alloc: Allocation) -> Result<(), AllocError> {
        let id = alloc.reservation_id.clone();
        if self.live.contains_key(&id) {
            return Err(AllocError::Placement(format!("{id} already holds an allocation")));
        }
        for dev in &alloc.devices {
            if self.inventory.device(dev).is_none() {
                return Err(AllocError::Placement(format!("unknown device {dev}")));
            }
            if let Some(owner) = self.device_owner.get(dev) {
                return Err(AllocError::exhausted(
                    ResourceClass::Devices,
                    format!("{dev} is held by {owner}"),
                ));
            }
        }
        let mut used = self.node_used.clone();
        for vm in &alloc.vm_placements {
            let idx = self
                .inventory
                .compute_nodes
                .iter()
                .position(|n| n.id == vm.compute_node_id)
                .ok_or_else(|| AllocError::Placement(format!("unknown host {}", vm.compute_node_id)))?;
            let node = &self.inventory.compute_nodes[idx];
            let u = &mut used[idx];
            u.cores += vm.cores;
            u.ram_gb += vm.ram_gb;
            u.storage_gb += vm.storage_gb;
            if u.cores > node.cores || u.ram_gb > node.ram_gb || u.storage_gb > node.storage_gb {
                return Err(AllocError::exhausted(
                    ResourceClass::Compute,
                    format!("host {} over capacity", node.id),
                ));
            }
        }
        let mut blocks = self.blocks.clone();
        for b in &alloc.slots {
            let block = blocks.entry(b.node_id.clone()).or_insert_with(|| {
                SpectrumBlock::new(b.node_id.clone(), b.block_center_hz, b.block_bw_hz)
                    .with_rate(b.block_rate_sps)
            });
            if !block.fits(b.slot.offset_hz, b.slot.bw_hz) {
                return Err(AllocError::exhausted(
                    ResourceClass::Spectrum,
                    format!("slot at {} Hz collides in {}", b.center_hz(), b.node_id),
                ));
            }
            block.slots.push(b.slot.clone());
        }
        self.node_used = used;
        self.blocks = blocks;
        for dev in &alloc.devices {
            self.device_owner.insert(dev.clone(), id.clone());
        }
        self.network_reserved_bps += alloc.network_bps_reserved;
        self.live.insert(id, alloc);
        Ok(())
    }

    /// Returns everything held by `id`. Releasing twice is a no-op; the
    /// return value says whether anything was freed.
    pub fn release(&mut self, id: &ReservationId) -> bool {
        let Some(alloc) = self.live.remove(id) else {
            return false;
        };
        for dev in &alloc.devices {
            self.device_owner.remove(dev);
        }
        for vm in &alloc.vm_placements {
            if let Some(idx) = self
                .inventory
                .compute_nodes
                .iter()
                .position(|n| n.id == vm.compute_node_id)
            {
                let u = &mut self.node_used[idx];
                u.cores -= vm.cores;
                u.ram_gb -= vm.ram_gb;
                u.storage_gb -= vm.storage_gb;
            }
        }
        for b in &alloc.slots {
            if let Some(block) = self.blocks.get_mut(&b.node_id) {
                block.remove_owner(id);
                if block.slots.is_empty() {
                    self.blocks.remove(&b.node_id);
                }
            }
        }
        self.network_reserved_bps -= alloc.network_bps_reserved;
        if self.live.is_empty() {
            // Clear accumulated rounding once nothing is held.
            self.network_reserved_bps = 0.0;
        }
        true
    }

    /// Free and held totals per class. Free amounts are read from the pools,
    /// held amounts are summed over live allocations.
    pub fn accounting(&self) -> Vec<ClassAccount> {
        let inv = &self.inventory;
        let held_devices: usize = self.live.values().map(|a| a.devices.len()).sum();
        let free_devices = inv
            .sdr_devices
            .iter()
            .filter(|d| !self.device_owner.contains_key(&d.id))
            .count();
        let placements = || self.live.values().flat_map(|a| a.vm_placements.iter());
        let mut out = vec![ClassAccount {
            class: "devices".into(),
            total: inv.sdr_devices.len() as f64,
            held: held_devices as f64,
            free: free_devices as f64,
        }];
        let per_node = |f: &dyn Fn(&crate::inventory::ComputeNode, &NodeUsage) -> f64| -> f64 {
            inv.compute_nodes
                .iter()
                .zip(&self.node_used)
                .map(|(n, u)| f(n, u))
                .sum()
        };
        out.push(ClassAccount {
            class: "cores".into(),
            total: per_node(&|n, _| n.cores as f64),
            held: placements().map(|p| p.cores as f64).sum(),
            free: per_node(&|n, u| (n.cores - u.cores) as f64),
        });
        out.push(ClassAccount {
            class: "ram_gb".into(),
            total: per_node(&|n, _| n.ram_gb as f64),
            held: placements().map(|p| p.ram_gb as f64).sum(),
            free: per_node(&|n, u| (n.ram_gb - u.ram_gb) as f64),
        });
        out.push(ClassAccount {
            class: "storage_gb".into(),
            total: per_node(&|n, _| n.storage_gb as f64),
            held: placements().map(|p| p.storage_gb as f64).sum(),
            free: per_node(&|n, u| (n.storage_gb - u.storage_gb) as f64),
        });
        out.push(ClassAccount {
            class: "network_bps".into(),
            total: inv.fabric.capacity_bps(),
            held: self.live.values().map(|a| a.network_bps_reserved).sum(),
            free: inv.fabric.capacity_bps() - self.network_reserved_bps,
        });
        out
    }

    /// Free cores and RAM per host, in inventory order.
    pub fn free_compute(&self) -> Vec<(String, u32, u64)> {
        self.inventory
            .compute_nodes
            .iter()
            .zip(&self.node_used)
            .map(|(n, u)| (n.id.clone(), n.cores - u.cores, n.ram_gb - u.ram_gb))
            .collect()
    }
}

/// Places a compute request as one VM, or as the fewest equal VMs that fit,
/// each put on the first host with room (first-fit-decreasing by RAM).
/// Updates `used` on success.
fn place_compute(inv: &Inventory, used: &mut [NodeUsage], demand: &ComputeSpec) -> Option<Vec<VmPlacement>> {
    if demand.is_empty() {
        return Some(Vec::new());
    }
    let n_nodes = inv.compute_nodes.len();
    for k in 1..=n_nodes as u64 {
        let piece = NodeUsage {
            cores: div_ceil(demand.cpu_cores as u64, k) as u32,
            ram_gb: div_ceil(demand.ram_gb, k),
            storage_gb: div_ceil(demand.storage_gb, k),
        };
        let mut trial = used.to_vec();
        let mut out = Vec::new();
        let mut ok = true;
        for _ in 0..k {
            let slot = inv.compute_nodes.iter().zip(trial.iter_mut()).find(|(n, u)| {
                n.cores - u.cores >= piece.cores
                    && n.ram_gb - u.ram_gb >= piece.ram_gb
                    && n.storage_gb - u.storage_gb >= piece.storage_gb
            });
            match slot {
                Some((n, u)) => {
                    u.cores += piece.cores;
                    u.ram_gb += piece.ram_gb;
                    u.storage_gb += piece.storage_gb;
                    out.push(VmPlacement {
                        compute_node_id: n.id.clone(),
                        cores: piece.cores,
                        ram_gb: piece.ram_gb,
                        storage_gb: piece.storage_gb,
                        lifetime_s: demand.vm_lifetime_s,
                    });
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            used.copy_from_slice(&trial);
            return Some(out);
        }
    }
    None
}

fn div_ceil(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Whether all `demands` can be placed together on an idle cluster by the
/// same heuristic `bind` uses, largest RAM first.
pub fn compute_feasible(inv: &Inventory, demands: &[&ComputeSpec]) -> bool {
    let mut sorted: Vec<&ComputeSpec> = demands.to_vec();
    sorted.sort_by(|a, b| b.ram_gb.cmp(&a.ram_gb).then(b.cpu_cores.cmp(&a.cpu_cores)));
    let mut used = vec![NodeUsage::default(); inv.compute_nodes.len()];
    sorted
        .into_iter()
        .all(|d| place_compute(inv, &mut used, d).is_some())
}
