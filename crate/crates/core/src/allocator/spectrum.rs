//! Spectrum blocks and the slots carved out of them.
//!
//! A block is the passband one radio node digitises at once. Each slot is an
//! owned sub-band identified by its offset from the block center. Adjacent
//! slots are kept apart by a guard band so the channel filters have room to
//! roll off.

use serde::{Deserialize, Serialize};

use crate::inventory::NetworkFabric;
use crate::ReservationId;

use super::AllocError;

/// Ratio of sample rate to occupied bandwidth used for new blocks and slots.
pub const OVERSAMPLE: f64 = 1.25;

const MIN_GUARD_HZ: f64 = 100e3;

/// Guard band required next to a slot of `bw_hz`.
pub fn guard_band(bw_hz: f64) -> f64 {
    (0.1 * bw_hz).max(MIN_GUARD_HZ)
}

/// Wire format of a complex sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SampleFormat {
    /// 16-bit I + 16-bit Q.
    #[default]
    SC16,
    /// 8-bit I + 8-bit Q.
    SC8,
}

impl SampleFormat {
    pub fn bytes_per_complex(self) -> u32 {
        match self {
            SampleFormat::SC16 => 4,
            SampleFormat::SC8 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSlot {
    /// Slot center relative to the block center.
    pub offset_hz: f64,
    pub bw_hz: f64,
    pub owner: ReservationId,
    pub slot_rate_sps: f64,
}

impl SpectrumSlot {
    pub fn low_hz(&self) -> f64 {
        self.offset_hz - self.bw_hz / 2.0
    }

    pub fn high_hz(&self) -> f64 {
        self.offset_hz + self.bw_hz / 2.0
    }

    /// Integer ratio between the block rate and this slot's rate.
    pub fn decimation(&self, block_rate_sps: f64) -> Option<usize> {
        integer_ratio(block_rate_sps, self.slot_rate_sps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBlock {
    pub node_id: String,
    pub center_hz: f64,
    pub block_bw_hz: f64,
    pub sample_rate_sps: f64,
    #[serde(default)]
    pub sample_format: SampleFormat,
    #[serde(default)]
    pub slots: Vec<SpectrumSlot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRequest {
    pub bw_hz: f64,
    #[serde(default)]
    pub preferred_offset_hz: Option<f64>,
    pub owner: ReservationId,
}

/// Result of checking whether a block's sample stream fits one switch port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Throughput {
    Fit { required_bps: f64 },
    Exceeds { required_bps: f64 },
}

impl Throughput {
    pub fn required_bps(&self) -> f64 {
        match *self {
            Throughput::Fit { required_bps } | Throughput::Exceeds { required_bps } => {
                required_bps
            }
        }
    }

    pub fn fits(&self) -> bool {
        matches!(self, Throughput::Fit { .. })
    }
}

/// Rounds `rate` up to a multiple of `5 * 10^(k-1)` where `10^k <= rate`.
/// 400 MS/s stays 400 MS/s; 187.5 MS/s becomes 200 MS/s.
pub fn divisor_friendly_rate(rate: f64) -> f64 {
    if rate <= 0.0 {
        return rate;
    }
    let step = 5.0 * 10f64.powf(rate.log10().floor() - 1.0);
    (rate / step - 1e-9).ceil() * step
}

fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    if !(num > 0.0 && den > 0.0) {
        return None;
    }
    let r = num / den;
    let n = r.round();
    if n >= 1.0 && (r - n).abs() <= 1e-9 * r {
        Some(n as usize)
    } else {
        None
    }
}

impl SpectrumBlock {
    /// Empty block with the default oversampled rate and SC16 samples.
    pub fn new(node_id: impl Into<String>, center_hz: f64, block_bw_hz: f64) -> SpectrumBlock {
        SpectrumBlock {
            node_id: node_id.into(),
            center_hz,
            block_bw_hz,
            sample_rate_sps: divisor_friendly_rate(OVERSAMPLE * block_bw_hz),
            sample_format: SampleFormat::SC16,
            slots: Vec::new(),
        }
    }

    pub fn with_rate(mut self, sample_rate_sps: f64) -> SpectrumBlock {
        self.sample_rate_sps = sample_rate_sps;
        self
    }

    pub fn with_format(mut self, format: SampleFormat) -> SpectrumBlock {
        self.sample_format = format;
        self
    }

    pub fn half_bw(&self) -> f64 {
        self.block_bw_hz / 2.0
    }

    /// Slot rate for a sub-band of `bw_hz`: the block rate divided by the
    /// largest integer that keeps the slot at least [`OVERSAMPLE`]x its width.
    pub fn slot_rate_for(&self, bw_hz: f64) -> f64 {
        let decim = (self.sample_rate_sps / (OVERSAMPLE * bw_hz)).floor().max(1.0);
        self.sample_rate_sps / decim
    }

    /// Whether a slot of `bw_hz` centered at `offset_hz` fits inside the block
    /// and clears every existing slot by the guard band.
    pub fn fits(&self, offset_hz: f64, bw_hz: f64) -> bool {
        // Small tolerance so slots packed exactly edge-to-guard are accepted
        // despite rounding in the offset arithmetic.
        let eps = 1e-6;
        if offset_hz - bw_hz / 2.0 < -self.half_bw() - eps
            || offset_hz + bw_hz / 2.0 > self.half_bw() + eps
        {
            return false;
        }
        self.slots.iter().all(|s| {
            let guard = guard_band(s.bw_hz).max(guard_band(bw_hz));
            (s.offset_hz - offset_hz).abs() + eps >= (s.bw_hz + bw_hz) / 2.0 + guard
        })
    }

    /// Checks the structural invariants: rate covers the bandwidth, slots
    /// sit inside the block, are pairwise guarded and have integer rate ratios.
    pub fn check(&self) -> Result<(), String> {
        if !(self.block_bw_hz > 0.0) {
            return Err("block_bw_hz must be > 0".into());
        }
        if self.sample_rate_sps < self.block_bw_hz {
            return Err("sample_rate_sps below block_bw_hz".into());
        }
        for (i, a) in self.slots.iter().enumerate() {
            if a.low_hz() < -self.half_bw() - 1e-6 || a.high_hz() > self.half_bw() + 1e-6 {
                return Err(format!("slot {i} outside block"));
            }
            if a.slot_rate_sps < a.bw_hz {
                return Err(format!("slot {i} rate below its bandwidth"));
            }
            if a.decimation(self.sample_rate_sps).is_none() {
                return Err(format!("slot {i} rate does not divide block rate"));
            }
            for b in &self.slots[i + 1..] {
                let guard = guard_band(a.bw_hz).max(guard_band(b.bw_hz));
                if (a.offset_hz - b.offset_hz).abs() + 1e-6 < (a.bw_hz + b.bw_hz) / 2.0 + guard {
                    return Err(format!("slot {i} overlaps a neighbour"));
                }
            }
        }
        Ok(())
    }

    pub fn occupied_hz(&self) -> f64 {
        self.slots.iter().map(|s| s.bw_hz).sum()
    }

    pub fn remove_owner(&mut self, owner: &ReservationId) {
        self.slots.retain(|s| &s.owner != owner);
    }
}

/// Chooses a slot for `request` inside `block` without modifying it.
///
/// The preferred offset wins when it fits; otherwise the lowest offset that
/// fits is used. Candidate offsets are the lower block edge and the first
/// guarded position above each existing slot, which is where any first-fit
/// packing must land.
pub fn plan_spectrum_slots(
    block: &SpectrumBlock,
    request: &SlotRequest,
) -> Result<SpectrumSlot, AllocError> {
    let bw = request.bw_hz;
    if !(bw.is_finite() && bw > 0.0) {
        return Err(AllocError::NoFit {
            bw_hz: bw,
            reason: "bandwidth must be > 0".into(),
        });
    }
    let make = |offset_hz: f64| SpectrumSlot {
        offset_hz,
        bw_hz: bw,
        owner: request.owner.clone(),
        slot_rate_sps: block.slot_rate_for(bw),
    };
    if let Some(pref) = request.preferred_offset_hz {
        if block.fits(pref, bw) {
            return Ok(make(pref));
        }
    }
    let mut candidates = vec![-block.half_bw() + bw / 2.0];
    for s in &block.slots {
        let guard = guard_band(s.bw_hz).max(guard_band(bw));
        candidates.push(s.offset_hz + (s.bw_hz + bw) / 2.0 + guard);
    }
    candidates.sort_by(f64::total_cmp);
    candidates
        .into_iter()
        .find(|&c| block.fits(c, bw))
        .map(make)
        .ok_or_else(|| AllocError::NoFit {
            bw_hz: bw,
            reason: format!(
                "{:.0} Hz of {:.0} Hz already occupied",
                block.occupied_hz(),
                block.block_bw_hz
            ),
        })
}

/// Bits per second needed to stream `n_streams` copies of the block's
/// sample stream, compared against one switch port.
pub fn throughput_check(block: &SpectrumBlock, fabric: &NetworkFabric, n_streams: u32) -> Throughput {
    let required_bps = block.sample_rate_sps
        * block.sample_format.bytes_per_complex() as f64
        * 8.0
        * n_streams as f64;
    if required_bps <= fabric.port_rate_bps {
        Throughput::Fit { required_bps }
    } else {
        Throughput::Exceeds { required_bps }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn owner(s: &str) -> ReservationId {
        ReservationId(s.into())
    }

    fn req(bw: f64, pref: Option<f64>) -> SlotRequest {
        SlotRequest {
            bw_hz: bw,
            preferred_offset_hz: pref,
            owner: owner("r"),
        }
    }

    #[test]
    fn default_rate_for_a_dual_node_block() {
        let block = SpectrumBlock::new("n", 2.0e9, 320e6);
        assert_eq!(block.sample_rate_sps, 400e6);
        assert_eq!(block.sample_format, SampleFormat::SC16);
        assert_eq!(divisor_friendly_rate(187.5e6), 200e6);
        assert_eq!(divisor_friendly_rate(25e6), 25e6);
    }

    #[test]
    fn slot_rates_divide_the_block_rate() {
        let block = SpectrumBlock::new("n", 2.0e9, 320e6);
        for bw in [1e6, 5e6, 10e6, 20e6, 33e6, 100e6, 320e6] {
            let rate = block.slot_rate_for(bw);
            assert!(rate >= OVERSAMPLE * bw || rate == block.sample_rate_sps);
            assert!(integer_ratio(block.sample_rate_sps, rate).is_some());
        }
        assert_eq!(block.slot_rate_for(20e6), 25e6);
    }

    #[test]
    fn empty_block_honours_preference() {
        let block = SpectrumBlock::new("n", 2.0e9, 320e6);
        let slot = plan_spectrum_slots(&block, &req(20e6, Some(0.0))).unwrap();
        assert_eq!(slot.offset_hz, 0.0);
        assert_eq!(slot.bw_hz, 20e6);
    }

    #[test]
    fn full_block_rejects() {
        let mut block = SpectrumBlock::new("n", 2.0e9, 320e6);
        // One 310 MHz slot pinned to the lower edge leaves 10 MHz.
        block.slots.push(SpectrumSlot {
            offset_hz: -160e6 + 155e6,
            bw_hz: 310e6,
            owner: owner("a"),
            slot_rate_sps: 400e6,
        });
        assert!(matches!(
            plan_spectrum_slots(&block, &req(20e6, None)),
            Err(AllocError::NoFit { .. })
        ));
    }

    #[test]
    fn unfit_preference_falls_back_to_first_fit() {
        let mut block = SpectrumBlock::new("n", 2.0e9, 320e6);
        let first = plan_spectrum_slots(&block, &req(100e6, Some(0.0))).unwrap();
        block.slots.push(first);
        let second = plan_spectrum_slots(&block, &req(100e6, Some(10e6))).unwrap();
        assert_eq!(second.offset_hz, -110e6);
    }

    #[test]
    fn zero_bandwidth_rejected() {
        let block = SpectrumBlock::new("n", 2.0e9, 320e6);
        assert!(plan_spectrum_slots(&block, &req(0.0, None)).is_err());
    }

    #[test]
    fn throughput_examples() {
        let fabric = NetworkFabric::default();
        let block = SpectrumBlock::new("n", 2e9, 160e6).with_rate(200e6);
        assert_eq!(
            throughput_check(&block, &fabric, 1),
            Throughput::Fit { required_bps: 6.4e9 }
        );
        assert_eq!(
            throughput_check(&block, &fabric, 2),
            Throughput::Exceeds { required_bps: 12.8e9 }
        );
        let wide = SpectrumBlock::new("n", 2e9, 320e6)
            .with_rate(320e6)
            .with_format(SampleFormat::SC8);
        assert_eq!(
            throughput_check(&wide, &fabric, 1),
            Throughput::Fit { required_bps: 5.12e9 }
        );
    }
}
