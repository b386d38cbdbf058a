use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::SpecVirtError;

pub const DEFAULT_STOPBAND_ATTEN_DB: f64 = 60.0;

/// Linear-phase low-pass FIR designed for one sample rate.
///
/// Frequencies up to `cutoff_hz` pass; frequencies from
/// `cutoff_hz + transition_hz` up to Nyquist are attenuated by at least
/// `stopband_atten_db`. `taps` has odd length and unit gain at DC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub rate_sps: f64,
    pub cutoff_hz: f64,
    pub transition_hz: f64,
    pub stopband_atten_db: f64,
    pub taps: Vec<f64>,
}

impl FilterSpec {
    /// Kaiser-windowed sinc design.
    pub fn lowpass(
        rate_sps: f64,
        cutoff_hz: f64,
        transition_hz: f64,
        stopband_atten_db: f64,
    ) -> Result<FilterSpec, SpecVirtError> {
        let bad = |reason: String| Err(SpecVirtError::Filter(reason));
        if !(rate_sps > 0.0 && rate_sps.is_finite()) {
            return bad(format!("rate {rate_sps} must be positive"));
        }
        if !(cutoff_hz > 0.0 && transition_hz > 0.0) {
            return bad(format!("cutoff {cutoff_hz} and transition {transition_hz} must be positive"));
        }
        if cutoff_hz + transition_hz > rate_sps / 2.0 * (1.0 + 1e-12) {
            return bad(format!(
                "cutoff + transition = {} exceeds Nyquist {}",
                cutoff_hz + transition_hz,
                rate_sps / 2.0
            ));
        }
        if !(stopband_atten_db > 0.0) {
            return bad(format!("stopband attenuation {stopband_atten_db} must be positive"));
        }

        // The textbook length estimate runs a little short; 3 dB of design
        // margin keeps the realized stopband at the requested level.
        let a = stopband_atten_db + 3.0;
        let beta = kaiser_beta(a);
        let dw = 2.0 * PI * transition_hz / rate_sps;
        let mut n = ((a - 7.95) / (2.285 * dw)).ceil().max(1.0) as usize + 1;
        if n % 2 == 0 {
            n += 1;
        }
        let fc = (cutoff_hz + transition_hz / 2.0) / rate_sps;
        let mid = (n - 1) as f64 / 2.0;
        let i0_beta = bessel_i0(beta);
        let mut taps: Vec<f64> = (0..n)
            .map(|i| {
                let x = i as f64 - mid;
                let ideal = if x == 0.0 {
                    2.0 * fc
                } else {
                    (2.0 * PI * fc * x).sin() / (PI * x)
                };
                let r = if mid > 0.0 { x / mid } else { 0.0 };
                let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
                ideal * w
            })
            .collect();
        let dc: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= dc;
        }
        Ok(FilterSpec {
            rate_sps,
            cutoff_hz,
            transition_hz,
            stopband_atten_db,
            taps,
        })
    }

    /// Samples of delay through the filter.
    pub fn group_delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    pub fn stopband_edge_hz(&self) -> f64 {
        self.cutoff_hz + self.transition_hz
    }
}

fn kaiser_beta(a: f64) -> f64 {
    if a > 50.0 {
        0.1102 * (a - 8.7)
    } else if a >= 21.0 {
        0.5842 * (a - 21.0).powf(0.4) + 0.07886 * (a - 21.0)
    } else {
        0.0
    }
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= (half / k) * (half / k);
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}
