//! Emulated experiment runs: slot signals are packed into their spectrum
//! block, passed through the channel scenario, and each receiving radio's
//! stream is split back into slots and measured.

use serde::{Deserialize, Serialize};

use cornet_core::allocator::{Allocation, SlotBinding, SpectrumBlock};
use cornet_core::chanem::{apply_channel, attenuation_at, mean_power_dbm, ChannelScenario};
use cornet_core::datamgr::{ExperimentRecord, Location};
use cornet_core::specvirt::{aggregate, disaggregate, multitone, slot_filter, FilterSpec, IqBuffer};
use cornet_core::ReservationId;

use crate::error::ApiError;

pub const MAX_SAMPLES_PER_STEP: usize = 1 << 20;
/// Slot samples left per measurement once filter transients are cut.
pub const MIN_MEASURED: usize = 16;
pub const MAX_STEPS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxAssignment {
    pub radio_id: String,
    /// Index into the reservation's slot list.
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulationRequest {
    pub reservation_id: ReservationId,
    /// Archive to record measurements into.
    #[serde(default)]
    pub experiment_id: Option<String>,
    pub duration_s: f64,
    pub step_s: f64,
    #[serde(default = "default_samples")]
    pub samples_per_step: usize,
    #[serde(default)]
    pub seed: u64,
    /// Which scenario radio transmits in which slot. Empty assigns the
    /// first radios to the slots in order.
    #[serde(default)]
    pub tx: Vec<TxAssignment>,
}

fn default_samples() -> usize {
    4096
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulationResult {
    pub reservation_id: ReservationId,
    pub experiment_id: Option<String>,
    pub scenario_hash: String,
    pub steps: usize,
    pub tx: Vec<TxAssignment>,
    /// Received slot power at every receiving radio, every step.
    pub measurements: Vec<ExperimentRecord>,
    pub records_appended: usize,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Compass bearing from `from` to `to` in degrees, clockwise from +y.
fn bearing_deg(from: [f64; 3], to: [f64; 3]) -> f64 {
    let deg = (to[0] - from[0]).atan2(to[1] - from[1]).to_degrees().rem_euclid(360.0);
    if deg >= 360.0 {
        0.0
    } else {
        deg
    }
}

struct Transmitter {
    radio: String,
    binding: SlotBinding,
    filter: FilterSpec,
    trim: usize,
    block_signal: IqBuffer,
}

/// Runs the emulation and returns one record per (step, receiver, slot
/// heard). Record times are `base_t_us` plus the scenario time.
pub fn run(
    sc: &ChannelScenario,
    allocation: &Allocation,
    req: &EmulationRequest,
    base_t_us: i64,
) -> Result<(Vec<TxAssignment>, Vec<ExperimentRecord>), ApiError> {
    if !(req.step_s > 0.0 && req.step_s.is_finite() && req.duration_s >= 0.0 && req.duration_s.is_finite()) {
        return Err(ApiError::validation("step_s must be positive and duration_s non-negative"));
    }
    if (req.duration_s / req.step_s).ceil() as usize > MAX_STEPS {
        return Err(ApiError::validation(format!("more than {MAX_STEPS} steps")));
    }
    if req.samples_per_step < 64 || req.samples_per_step > MAX_SAMPLES_PER_STEP {
        return Err(ApiError::validation(format!(
            "samples_per_step must lie in [64, {MAX_SAMPLES_PER_STEP}]"
        )));
    }
    if allocation.slots.is_empty() {
        return Err(ApiError::state(format!("{} holds no spectrum slots", allocation.reservation_id)));
    }
    let tx = if req.tx.is_empty() {
        sc.radios
            .iter()
            .zip(0..allocation.slots.len())
            .map(|(r, slot)| TxAssignment { radio_id: r.id.clone(), slot })
            .collect()
    } else {
        req.tx.clone()
    };
    let first = &allocation.slots[tx.first().map_or(0, |t| t.slot).min(allocation.slots.len() - 1)];
    let mut block = SpectrumBlock::new(first.node_id.clone(), first.block_center_hz, first.block_bw_hz)
        .with_rate(first.block_rate_sps);
    let mut transmitters = Vec::new();
    for (i, t) in tx.iter().enumerate() {
        let binding = allocation.slots.get(t.slot).ok_or_else(|| {
            ApiError::validation(format!("slot {} out of range ({} slots)", t.slot, allocation.slots.len()))
        })?;
        if sc.radio(&t.radio_id).is_none() {
            return Err(ApiError::validation(format!("radio {} not in scenario", t.radio_id)));
        }
        if tx[..i].iter().any(|o| o.slot == t.slot || o.radio_id == t.radio_id) {
            return Err(ApiError::validation(format!("radio {} or slot {} assigned twice", t.radio_id, t.slot)));
        }
        if binding.block_center_hz != block.center_hz || binding.block_rate_sps != block.sample_rate_sps {
            return Err(ApiError::validation("transmit slots must share one spectrum block"));
        }
        block.slots.push(binding.slot.clone());
        let filter = slot_filter(&binding.slot, block.sample_rate_sps)?;
        let decim = binding.slot.decimation(block.sample_rate_sps).ok_or_else(|| {
            ApiError::validation(format!("slot {} rate does not divide the block rate", t.slot))
        })?;
        let trim = filter.taps.len() / decim + 1;
        transmitters.push((t.radio_id.clone(), binding.clone(), filter, decim, trim));
    }
    let len = req.samples_per_step;
    let transmitters: Vec<Transmitter> = transmitters
        .into_iter()
        .enumerate()
        .map(|(i, (radio, binding, filter, decim, trim))| {
            let s = &binding.slot;
            let n = len / decim;
            if n < 2 * trim + MIN_MEASURED {
                return Err(ApiError::validation(format!(
                    "samples_per_step {len} leaves fewer than {MIN_MEASURED} samples of slot {} after filter transients; need at least {}",
                    i,
                    (2 * trim + MIN_MEASURED) * decim
                )));
            }
            let mut x = multitone(n, s.slot_rate_sps, s.bw_hz, 0.9, 8, splitmix(req.seed ^ (i as u64 + 1)));
            // 0 dBm over the samples that are measured, not the whole burst.
            let window = x.slice(trim..n - trim);
            let g = (window.len() as f64 / window.energy()).sqrt();
            for v in &mut x.samples {
                *v *= g;
            }
            let block_signal = aggregate(&[(x, s.clone())], &block, len)?;
            Ok(Transmitter { radio, binding, filter, trim, block_signal })
        })
        .collect::<Result<_, ApiError>>()?;

    let mut records = Vec::new();
    let mut k = 0u64;
    loop {
        let t_s = k as f64 * req.step_s;
        if t_s >= req.duration_s {
            break;
        }
        let matrix = attenuation_at(sc, t_s)?;
        let positions = sc.positions_at(t_s);
        let t_utc_us = base_t_us + (t_s * 1e6).round() as i64;
        for (j, rx) in sc.radios.iter().enumerate() {
            let heard: Vec<&Transmitter> = transmitters.iter().filter(|t| t.radio != rx.id).collect();
            if heard.is_empty() {
                continue;
            }
            let streams: Vec<(String, IqBuffer)> =
                heard.iter().map(|t| (t.radio.clone(), t.block_signal.clone())).collect();
            let seed = splitmix(req.seed ^ (k << 16) ^ j as u64);
            let received = apply_channel(&streams, &matrix, &rx.id, sc.noise_floor_dbm_hz, seed)?;
            for t in heard {
                let y = disaggregate(&received, &t.binding.slot, &t.filter)?;
                let y = y.slice(t.trim..y.len() - t.trim);
                let tx_pos = positions[sc.radios.iter().position(|r| r.id == t.radio).expect("checked")];
                records.push(ExperimentRecord {
                    t_utc_us,
                    node_id: rx.id.clone(),
                    location: Location::Xyz(positions[j]),
                    freq_hz: t.binding.center_hz(),
                    azimuth_deg: bearing_deg(positions[j], tx_pos),
                    value_dbm: mean_power_dbm(&y),
                });
            }
        }
        k += 1;
    }
    Ok((tx, records))
}
