//! Spectrum virtualization: packing per-slot baseband signals into one
//! block-rate stream and pulling them back out.
//!
//! Everything runs on `Complex64` samples. A slot signal at
//! `slot_rate_sps` is interpolated to the block rate, shifted to its offset
//! and summed with the others ([`aggregate`]). [`disaggregate`] reverses one
//! slot: shift back to baseband, low-pass, decimate. All filters are
//! delay-compensated, so outputs line up sample for sample with inputs.

mod filter;
pub mod iqfile;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{guard_band, SpectrumBlock, SpectrumSlot};

pub use filter::{FilterSpec, DEFAULT_STOPBAND_ATTEN_DB};

/// Reported instead of negative infinity when two buffers are identical.
pub const EVM_FLOOR_DB: f64 = -300.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecVirtError {
    #[error("ShiftError: shift {shift_hz} Hz aliases at {rate_sps} S/s")]
    Shift { shift_hz: f64, rate_sps: f64 },
    #[error("RateError: {0}")]
    Rate(String),
    #[error("SlotError: {0}")]
    Slot(String),
    #[error("ZeroReferenceError: reference buffer has no energy")]
    ZeroReference,
    #[error("FilterError: {0}")]
    Filter(String),
    #[error("BufferError: {0}")]
    Buffer(String),
}

/// A run of complex baseband samples.
///
/// `start_phase` is the oscillator phase (radians) at which the next mix of
/// this stream starts; [`mix_frequency`] sets it on its output so that
/// consecutive buffers can be shifted without a seam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqBuffer {
    pub samples: Vec<Complex64>,
    pub rate_sps: f64,
    #[serde(default)]
    pub start_phase: f64,
}

impl IqBuffer {
    pub fn new(samples: Vec<Complex64>, rate_sps: f64) -> IqBuffer {
        IqBuffer {
            samples,
            rate_sps,
            start_phase: 0.0,
        }
    }

    pub fn zeros(len: usize, rate_sps: f64) -> IqBuffer {
        IqBuffer::new(vec![Complex64::new(0.0, 0.0); len], rate_sps)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    /// Copy of `range`, keeping rate and phase.
    pub fn slice(&self, range: std::ops::Range<usize>) -> IqBuffer {
        IqBuffer {
            samples: self.samples[range].to_vec(),
            rate_sps: self.rate_sps,
            start_phase: self.start_phase,
        }
    }

    pub fn validate(&self) -> Result<(), SpecVirtError> {
        if !(self.rate_sps > 0.0 && self.rate_sps.is_finite()) {
            return Err(SpecVirtError::Buffer(format!("rate {} must be positive", self.rate_sps)));
        }
        if let Some(i) = self.samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(SpecVirtError::Buffer(format!("sample {i} is not finite")));
        }
        Ok(())
    }
}

/// Shifts `x` by `shift_hz`: `y[n] = x[n] * exp(j(2*pi*shift*n/rate + phi0))`
/// with `phi0 = x.start_phase`. The output's `start_phase` is the phase for
/// sample `n = len`, wrapped to `[0, 2*pi)`.
pub fn mix_frequency(x: &IqBuffer, shift_hz: f64) -> Result<IqBuffer, SpecVirtError> {
    x.validate()?;
    if shift_hz.abs() >= x.rate_sps / 2.0 {
        return Err(SpecVirtError::Shift {
            shift_hz,
            rate_sps: x.rate_sps,
        });
    }
    let phi0 = x.start_phase;
    if shift_hz == 0.0 && phi0 == 0.0 {
        return Ok(x.clone());
    }
    let step = shift_hz / x.rate_sps;
    // Cycles are reduced mod 1 before scaling so the phase stays accurate
    // over long buffers.
    let phase = |n: usize| phi0 + 2.0 * PI * (step * n as f64).rem_euclid(1.0);
    // Rotate by a fixed phasor, re-anchored on the exact phase every
    // RESYNC samples to stop rounding from accumulating.
    const RESYNC: usize = 512;
    let w = Complex64::from_polar(1.0, 2.0 * PI * step);
    let mut samples = Vec::with_capacity(x.len());
    for (c, chunk) in x.samples.chunks(RESYNC).enumerate() {
        let mut rot = Complex64::from_polar(1.0, phase(c * RESYNC));
        for s in chunk {
            samples.push(s * rot);
            rot *= w;
        }
    }
    Ok(IqBuffer {
        samples,
        rate_sps: x.rate_sps,
        start_phase: phase(x.len()).rem_euclid(2.0 * PI),
    })
}

/// Changes the rate of `x` by `up / down`. `f` must be designed at
/// `x.rate_sps * up`; it serves as both the interpolation image filter and
/// the decimation anti-alias filter. Output sample `m` is aligned with input
/// time `m * down / up`.
pub fn resample_integer(x: &IqBuffer, up: usize, down: usize, f: &FilterSpec) -> Result<IqBuffer, SpecVirtError> {
    x.validate()?;
    if up == 0 || down == 0 {
        return Err(SpecVirtError::Rate(format!("ratio {up}/{down} must be positive")));
    }
    if up == 1 && down == 1 {
        return Ok(x.clone());
    }
    let mid_rate = x.rate_sps * up as f64;
    if (f.rate_sps - mid_rate).abs() > 1e-9 * mid_rate {
        return Err(SpecVirtError::Rate(format!(
            "filter designed for {} S/s, resampler runs at {mid_rate} S/s",
            f.rate_sps
        )));
    }
    let delay = f.group_delay();
    // Polyphase branches, stored reversed so each output is a forward dot
    // product over a contiguous run of input samples.
    let branches: Vec<Vec<f64>> = (0..up)
        .map(|p| {
            let mut b: Vec<f64> = f.taps.iter().skip(p).step_by(up).map(|t| t * up as f64).collect();
            b.reverse();
            b
        })
        .collect();
    let n_in = x.len();
    let re: Vec<f64> = x.samples.iter().map(|s| s.re).collect();
    let im: Vec<f64> = x.samples.iter().map(|s| s.im).collect();
    let n_out = (n_in * up).div_ceil(down);
    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out {
        // Position on the upsampled grid, advanced by the filter delay.
        let k = m * down + delay;
        let branch = &branches[k % up];
        let len = branch.len();
        // Reversed tap r meets input sample k/up - (len - 1) + r.
        let newest = k / up;
        let oldest = newest as isize - (len as isize - 1);
        let lo = oldest.max(0) as usize;
        let hi = (newest + 1).min(n_in);
        if lo >= hi {
            out.push(Complex64::new(0.0, 0.0));
            continue;
        }
        let taps = &branch[(lo as isize - oldest) as usize..][..hi - lo];
        out.push(dot(taps, &re[lo..hi], &im[lo..hi]));
    }
    Ok(IqBuffer {
        samples: out,
        rate_sps: x.rate_sps * up as f64 / down as f64,
        start_phase: 0.0,
    })
}

/// Real taps against split complex samples, eight lanes at a time.
fn dot(taps: &[f64], re: &[f64], im: &[f64]) -> Complex64 {
    const LANES: usize = 8;
    let mut ar = [0.0f64; LANES];
    let mut ai = [0.0f64; LANES];
    let split = taps.len() - taps.len() % LANES;
    let (tc, tr) = taps.split_at(split);
    let (rc, rr) = re.split_at(split);
    let (ic, ir) = im.split_at(split);
    for ((t, r), i) in tc.chunks_exact(LANES).zip(rc.chunks_exact(LANES)).zip(ic.chunks_exact(LANES)) {
        for l in 0..LANES {
            ar[l] += t[l] * r[l];
            ai[l] += t[l] * i[l];
        }
    }
    let mut sr: f64 = ar.iter().sum();
    let mut si: f64 = ai.iter().sum();
    for ((t, r), i) in tr.iter().zip(rr).zip(ir) {
        sr += t * r;
        si += t * i;
    }
    Complex64::new(sr, si)
}

/// Channel filter for `slot` at the block rate: passes the slot's band and
/// stops at the nearer of its guard edge and the first interpolation image.
pub fn slot_filter(slot: &SpectrumSlot, block_rate_sps: f64) -> Result<FilterSpec, SpecVirtError> {
    let half = slot.bw_hz / 2.0;
    let stop = (half + guard_band(slot.bw_hz)).min(slot.slot_rate_sps - half);
    if stop <= half {
        return Err(SpecVirtError::Slot(format!(
            "slot rate {} S/s leaves no transition band for {} Hz",
            slot.slot_rate_sps, slot.bw_hz
        )));
    }
    FilterSpec::lowpass(block_rate_sps, half, stop - half, DEFAULT_STOPBAND_ATTEN_DB)
}

fn decimation(slot: &SpectrumSlot, block_rate_sps: f64) -> Result<usize, SpecVirtError> {
    slot.decimation(block_rate_sps).ok_or_else(|| {
        SpecVirtError::Rate(format!(
            "block rate {block_rate_sps} S/s is not a multiple of slot rate {} S/s",
            slot.slot_rate_sps
        ))
    })
}

fn find_slot<'a>(block: &'a SpectrumBlock, slot: &SpectrumSlot) -> Option<&'a SpectrumSlot> {
    block
        .slots
        .iter()
        .find(|s| s.owner == slot.owner && s.offset_hz == slot.offset_hz && s.bw_hz == slot.bw_hz)
}

/// Builds `len` samples of the block signal from per-slot signals. Each slot
/// must belong to `block`, and each signal must be at its slot's rate.
/// Shorter contributions are zero-padded, longer ones truncated.
pub fn aggregate(
    slot_signals: &[(IqBuffer, SpectrumSlot)],
    block: &SpectrumBlock,
    len: usize,
) -> Result<IqBuffer, SpecVirtError> {
    let rate = block.sample_rate_sps;
    let mut out = IqBuffer::zeros(len, rate);
    for (i, (signal, slot)) in slot_signals.iter().enumerate() {
        if find_slot(block, slot).is_none() {
            return Err(SpecVirtError::Slot(format!(
                "slot {i} at {} Hz offset is not part of the {} block",
                slot.offset_hz, block.node_id
            )));
        }
        for (j, (_, other)) in slot_signals.iter().enumerate().skip(i + 1) {
            if other == slot {
                return Err(SpecVirtError::Slot(format!("slots {i} and {j} are the same slot")));
            }
        }
        if (signal.rate_sps - slot.slot_rate_sps).abs() > 1e-9 * slot.slot_rate_sps {
            return Err(SpecVirtError::Rate(format!(
                "slot {i} signal at {} S/s, slot runs at {} S/s",
                signal.rate_sps, slot.slot_rate_sps
            )));
        }
        let up = decimation(slot, rate)?;
        let at_block_rate = if up == 1 {
            signal.clone()
        } else {
            resample_integer(signal, up, 1, &slot_filter(slot, rate)?)?
        };
        let mut shifted = at_block_rate;
        shifted.start_phase = 0.0;
        let shifted = mix_frequency(&shifted, slot.offset_hz)?;
        for (acc, s) in out.samples.iter_mut().zip(&shifted.samples) {
            *acc += s;
        }
    }
    Ok(out)
}

/// Recovers one slot's signal from a block-rate stream.
pub fn disaggregate(block_signal: &IqBuffer, slot: &SpectrumSlot, f: &FilterSpec) -> Result<IqBuffer, SpecVirtError> {
    let down = decimation(slot, block_signal.rate_sps)?;
    let mut base = block_signal.clone();
    base.start_phase = 0.0;
    let base = mix_frequency(&base, -slot.offset_hz)?;
    resample_integer(&base, 1, down, f)
}

/// Error vector magnitude of `test` against `reference` in dB relative to
/// the reference power. Buffers must share a rate and length.
pub fn evm_dbc(reference: &IqBuffer, test: &IqBuffer) -> Result<f64, SpecVirtError> {
    if (reference.rate_sps - test.rate_sps).abs() > 1e-9 * reference.rate_sps {
        return Err(SpecVirtError::Rate(format!(
            "reference at {} S/s, test at {} S/s",
            reference.rate_sps, test.rate_sps
        )));
    }
    if reference.len() != test.len() {
        return Err(SpecVirtError::Buffer(format!(
            "reference has {} samples, test {}",
            reference.len(),
            test.len()
        )));
    }
    let power = reference.energy();
    if power == 0.0 {
        return Err(SpecVirtError::ZeroReference);
    }
    let err: f64 = reference
        .samples
        .iter()
        .zip(&test.samples)
        .map(|(r, t)| (r - t).norm_sqr())
        .sum();
    if err == 0.0 {
        return Ok(EVM_FLOOR_DB);
    }
    Ok((10.0 * (err / power).log10()).max(EVM_FLOOR_DB))
}

/// Sum of `n_tones` random complex exponentials confined to
/// `|f| <= occupancy * bw_hz / 2`, scaled to unit mean power.
/// Deterministic for a given seed.
pub fn multitone(len: usize, rate_sps: f64, bw_hz: f64, occupancy: f64, n_tones: usize, seed: u64) -> IqBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edge = occupancy * bw_hz / 2.0;
    let tones: Vec<(f64, f64, f64)> = (0..n_tones)
        .map(|_| {
            (
                rng.random_range(-edge..=edge),
                rng.random_range(0.5..1.0),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let mut samples: Vec<Complex64> = (0..len)
        .map(|n| {
            tones
                .iter()
                .map(|&(f, a, ph)| {
                    let cycles = (f / rate_sps * n as f64).rem_euclid(1.0);
                    Complex64::from_polar(a, 2.0 * PI * cycles + ph)
                })
                .sum()
        })
        .collect();
    let power = samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / len.max(1) as f64;
    if power > 0.0 {
        let g = 1.0 / power.sqrt();
        for s in &mut samples {
            *s *= g;
        }
    }
    IqBuffer::new(samples, rate_sps)
}

/// Quality of one slot after a round trip through [`round_trip`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotQuality {
    pub offset_hz: f64,
    pub bw_hz: f64,
    pub slot_rate_sps: f64,
    pub evm_dbc: f64,
    /// Power reaching this slot's output from all other slots, relative to
    /// the strongest of them. `None` with a single slot.
    pub leakage_dbc: Option<f64>,
}

/// Splits a 320 MHz block into `n_slots` equal regions, fills each slot
/// with a random multitone signal, aggregates `block_len` samples and
/// disaggregates every slot again. Filter transients at both ends are
/// excluded from the measurements.
pub fn round_trip(n_slots: usize, block_len: usize, seed: u64) -> Result<Vec<SlotQuality>, SpecVirtError> {
    if n_slots == 0 {
        return Err(SpecVirtError::Slot("need at least one slot".into()));
    }
    let mut block = SpectrumBlock::new("roundtrip", 0.0, 320e6);
    let region = block.block_bw_hz / n_slots as f64;
    let bw = ((region / 1.25) / 1e6).floor() * 1e6;
    for i in 0..n_slots {
        let offset = -block.half_bw() + region * (i as f64 + 0.5);
        block.slots.push(SpectrumSlot {
            offset_hz: offset,
            bw_hz: bw,
            owner: crate::ReservationId::from_seq(i as u64 + 1),
            slot_rate_sps: block.slot_rate_for(bw),
        });
    }
    let rate = block.sample_rate_sps;
    let inputs: Vec<(IqBuffer, SpectrumSlot)> = block
        .slots
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let n = block_len / decimation(s, rate).unwrap_or(1);
            let x = multitone(n, s.slot_rate_sps, s.bw_hz, 0.9, 12, seed.wrapping_mul(1000) + i as u64);
            (x, s.clone())
        })
        .collect();
    let composite = aggregate(&inputs, &block, block_len)?;
    let mut out = Vec::new();
    for (x, s) in &inputs {
        let f = slot_filter(s, rate)?;
        let trim = f.taps.len() / decimation(s, rate)? + 1;
        if x.len() <= 2 * trim {
            return Err(SpecVirtError::Buffer(format!(
                "{block_len} block samples leave nothing after filter transients"
            )));
        }
        let range = trim..x.len() - trim;
        let y = disaggregate(&composite, s, &f)?;
        let evm = evm_dbc(&x.slice(range.clone()), &y.slice(range.clone()))?;
        let leakage = if inputs.len() > 1 {
            let alone = aggregate(&[(x.clone(), s.clone())], &block, block_len)?;
            let mut rest = composite.clone();
            for (r, a) in rest.samples.iter_mut().zip(&alone.samples) {
                *r -= a;
            }
            let leak = disaggregate(&rest, s, &f)?.slice(range.clone());
            let strongest = inputs
                .iter()
                .filter(|(_, o)| o != s)
                .map(|(o, _)| o.energy() / o.len() as f64)
                .fold(0.0, f64::max);
            Some(10.0 * ((leak.energy() / leak.len() as f64) / strongest).log10())
        } else {
            None
        };
        out.push(SlotQuality {
            offset_hz: s.offset_hz,
            bw_hz: s.bw_hz,
            slot_rate_sps: s.slot_rate_sps,
            evm_dbc: evm,
            leakage_dbc: leakage,
        });
    }
    Ok(out)
}
