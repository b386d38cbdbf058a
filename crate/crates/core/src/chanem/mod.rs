//! Channel emulation: node geometry to attenuation matrices, and matrices
//! applied to IQ streams.
//!
//! The channel is flat: every (tx, rx) pair is one real gain. Received
//! streams are the attenuated sum of every other radio's transmission plus
//! receiver noise. Power is referenced so that a unit-magnitude sample
//! carries 0 dBm.

mod empirical;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::specvirt::IqBuffer;

pub use empirical::{format_matrix_file, parse_matrix_file};

/// Free-space constant for distance in meters and frequency in hertz.
pub const FSPL_CONSTANT_DB: f64 = -147.558;

pub const MAX_PHYSICAL_RADIOS: usize = 8;

/// A complete scenario file, schema included.
pub const EXAMPLE_SCENARIO: &str = include_str!("../../data/scenario_example.toml");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChanemError {
    #[error("DomainError: {0}")]
    Domain(String),
    #[error("ScenarioError: {0}")]
    Scenario(String),
    #[error("RateError: {0}")]
    Rate(String),
}

impl ChanemError {
    pub fn name(&self) -> &'static str {
        match self {
            ChanemError::Domain(_) => "DomainError",
            ChanemError::Scenario(_) => "ScenarioError",
            ChanemError::Rate(_) => "RateError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RadioKind {
    Physical,
    Virtual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Radio {
    pub id: String,
    pub kind: RadioKind,
    pub position_m: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalFrame {
    pub t_s: f64,
    pub a_db: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PathLossModel {
    FreeSpace,
    LogDistance {
        exponent: f64,
        d0_m: f64,
    },
    /// Measured matrices, rows and columns in radio order. `matrix_file` is
    /// read by [`ChannelScenario::load`] into `frames`.
    Empirical {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        matrix_file: Option<String>,
        #[serde(default)]
        frames: Vec<EmpiricalFrame>,
    },
}

/// Positions for some radios at time `t_s`. Radios not listed follow their
/// own earlier and later keyframes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub t_s: f64,
    #[serde(default)]
    pub positions: BTreeMap<String, [f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScenario {
    pub carrier_hz: f64,
    /// Receiver noise density. Absent means noiseless receivers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_floor_dbm_hz: Option<f64>,
    pub model: PathLossModel,
    pub radios: Vec<Radio>,
    #[serde(default)]
    pub keyframes: Vec<Keyframe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttenuationMatrix {
    pub n: usize,
    pub t_s: f64,
    pub ids: Vec<String>,
    pub a_db: Vec<Vec<f64>>,
}

impl AttenuationMatrix {
    pub fn index(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn get(&self, from: &str, to: &str) -> Option<f64> {
        Some(self.a_db[self.index(from)?][self.index(to)?])
    }
}

pub fn path_loss_db(model: &PathLossModel, d_m: f64, f_hz: f64) -> Result<f64, ChanemError> {
    if !(d_m > 0.0 && d_m.is_finite()) {
        return Err(ChanemError::Domain(format!("distance {d_m} m must be positive")));
    }
    if !(f_hz > 0.0 && f_hz.is_finite()) {
        return Err(ChanemError::Domain(format!("frequency {f_hz} Hz must be positive")));
    }
    let fspl = |d: f64| 20.0 * d.log10() + 20.0 * f_hz.log10() + FSPL_CONSTANT_DB;
    match model {
        PathLossModel::FreeSpace => Ok(fspl(d_m)),
        PathLossModel::LogDistance { exponent, d0_m } => {
            if !(*d0_m > 0.0) {
                return Err(ChanemError::Domain(format!("reference distance {d0_m} m must be positive")));
            }
            Ok(fspl(*d0_m) + 10.0 * exponent * (d_m / d0_m).log10())
        }
        PathLossModel::Empirical { .. } => {
            Err(ChanemError::Domain("empirical model has no distance law".into()))
        }
    }
}

impl ChannelScenario {
    /// Parses a scenario document. An empirical `matrix_file` is resolved
    /// against `base_dir`; without one, the frames must be inline.
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<ChannelScenario, ChanemError> {
        let mut sc: ChannelScenario =
            toml::from_str(text).map_err(|e| ChanemError::Scenario(e.to_string()))?;
        if let PathLossModel::Empirical { matrix_file: Some(file), frames } = &mut sc.model {
            if frames.is_empty() {
                let dir = base_dir.ok_or_else(|| {
                    ChanemError::Scenario(format!("matrix file {file} needs a base directory"))
                })?;
                let text = std::fs::read_to_string(dir.join(&*file))
                    .map_err(|e| ChanemError::Scenario(format!("{file}: {e}")))?;
                *frames = parse_matrix_file(&text, sc.radios.len())?;
            }
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ChannelScenario, ChanemError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ChanemError::Scenario(format!("{}: {e}", path.display())))?;
        ChannelScenario::from_toml(&text, path.parent())
    }

    pub fn example() -> ChannelScenario {
        ChannelScenario::from_toml(EXAMPLE_SCENARIO, None).expect("example scenario parses")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// SHA-256 over the canonical JSON form, empirical frames included.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn radio(&self, id: &str) -> Option<&Radio> {
        self.radios.iter().find(|r| r.id == id)
    }

    pub fn validate(&self) -> Result<(), ChanemError> {
        let bad = |m: String| Err(ChanemError::Scenario(m));
        let mut ids = BTreeSet::new();
        for r in &self.radios {
            if r.id.is_empty() {
                return bad("radio id is empty".into());
            }
            if !ids.insert(r.id.as_str()) {
                return bad(format!("duplicate radio id {}", r.id));
            }
            if r.position_m.iter().any(|c| !c.is_finite()) {
                return bad(format!("radio {} has a non-finite position", r.id));
            }
        }
        let physical = self.radios.iter().filter(|r| r.kind == RadioKind::Physical).count();
        if physical > MAX_PHYSICAL_RADIOS {
            return bad(format!("{physical} physical radios, at most {MAX_PHYSICAL_RADIOS} allowed"));
        }
        if !(self.carrier_hz > 0.0 && self.carrier_hz.is_finite()) {
            return bad(format!("carrier {} Hz must be positive", self.carrier_hz));
        }
        if let Some(n0) = self.noise_floor_dbm_hz {
            if !n0.is_finite() {
                return bad("noise floor must be finite".into());
            }
        }
        let mut last = f64::NEG_INFINITY;
        for k in &self.keyframes {
            if !(k.t_s >= 0.0 && k.t_s.is_finite()) {
                return bad(format!("keyframe time {} must be non-negative", k.t_s));
            }
            if k.t_s <= last {
                return bad(format!("keyframe times must strictly increase ({} after {last})", k.t_s));
            }
            last = k.t_s;
            for (id, p) in &k.positions {
                if !ids.contains(id.as_str()) {
                    return bad(format!("keyframe at {} s moves unknown radio {id}", k.t_s));
                }
                if p.iter().any(|c| !c.is_finite()) {
                    return bad(format!("keyframe at {} s has a non-finite position", k.t_s));
                }
            }
        }
        match &self.model {
            PathLossModel::FreeSpace => {}
            PathLossModel::LogDistance { exponent, d0_m } => {
                if !(*exponent > 0.0 && exponent.is_finite() && *d0_m > 0.0 && d0_m.is_finite()) {
                    return bad(format!("log-distance exponent {exponent} and d0 {d0_m} must be positive"));
                }
            }
            PathLossModel::Empirical { frames, .. } => {
                empirical::check_frames(frames, self.radios.len())?;
            }
        }
        Ok(())
    }

    /// Radio positions at `t_s`.
    ///
    /// Each radio's track starts at its declared position at t = 0 and runs
    /// through every keyframe that names it, linear in between and held
    /// after the last.
    pub fn positions_at(&self, t_s: f64) -> Vec<[f64; 3]> {
        self.radios
            .iter()
            .map(|r| {
                let mut prev = (0.0, r.position_m);
                for k in &self.keyframes {
                    let Some(&p) = k.positions.get(&r.id) else { continue };
                    if k.t_s <= t_s {
                        prev = (k.t_s, p);
                        continue;
                    }
                    let (t0, p0) = prev;
                    let w = (t_s - t0) / (k.t_s - t0);
                    return std::array::from_fn(|i| p0[i] + w * (p[i] - p0[i]));
                }
                prev.1
            })
            .collect()
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Attenuation between every pair of radios at `t_s`.
///
/// Geometric models floor the loss at 0 dB: radios closer than the
/// distance where the closed form crosses zero, or co-located, see unit gain.
pub fn attenuation_at(sc: &ChannelScenario, t_s: f64) -> Result<AttenuationMatrix, ChanemError> {
    if sc.radios.is_empty() {
        return Err(ChanemError::Scenario("scenario has no radios".into()));
    }
    if !(t_s >= 0.0 && t_s.is_finite()) {
        return Err(ChanemError::Domain(format!("time {t_s} s must be non-negative")));
    }
    let n = sc.radios.len();
    let ids = sc.radios.iter().map(|r| r.id.clone()).collect();
    let a_db = match &sc.model {
        PathLossModel::Empirical { frames, .. } => {
            let frame = frames
                .iter()
                .take_while(|f| f.t_s <= t_s)
                .last()
                .or(frames.first())
                .ok_or_else(|| ChanemError::Scenario("empirical model has no frames".into()))?;
            frame.a_db.clone()
        }
        model => {
            let pos = sc.positions_at(t_s);
            let mut a = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i + 1..n {
                    let d = distance(pos[i], pos[j]);
                    let loss = if d > 0.0 {
                        path_loss_db(model, d, sc.carrier_hz)?.max(0.0)
                    } else {
                        0.0
                    };
                    a[i][j] = loss;
                    a[j][i] = loss;
                }
            }
            a
        }
    };
    Ok(AttenuationMatrix { n, t_s, ids, a_db })
}

/// Received stream at `rx_id`: every other transmitter attenuated by its
/// path to `rx_id`, plus complex white noise at `noise_floor_dbm_hz`
/// integrated over the sample rate. `None` disables the noise.
pub fn apply_channel(
    tx: &[(String, IqBuffer)],
    m: &AttenuationMatrix,
    rx_id: &str,
    noise_floor_dbm_hz: Option<f64>,
    seed: u64,
) -> Result<IqBuffer, ChanemError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    apply_with_rng(tx, m, rx_id, noise_floor_dbm_hz, &mut rng)
}

fn apply_with_rng(
    tx: &[(String, IqBuffer)],
    m: &AttenuationMatrix,
    rx_id: &str,
    noise_floor_dbm_hz: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<IqBuffer, ChanemError> {
    let (_, first) = tx
        .first()
        .ok_or_else(|| ChanemError::Rate("no transmit buffers".into()))?;
    let (len, rate) = (first.len(), first.rate_sps);
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(ChanemError::Rate(format!("rate {rate} S/s must be positive")));
    }
    for (id, b) in tx {
        if b.len() != len || b.rate_sps != rate {
            return Err(ChanemError::Rate(format!(
                "{id} carries {} samples at {} S/s, expected {len} at {rate}",
                b.len(),
                b.rate_sps
            )));
        }
    }
    let rx = m
        .index(rx_id)
        .ok_or_else(|| ChanemError::Scenario(format!("receiver {rx_id} not in matrix")))?;
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for (id, b) in tx {
        let i = m
            .index(id)
            .ok_or_else(|| ChanemError::Scenario(format!("transmitter {id} not in matrix")))?;
        if i == rx {
            continue;
        }
        let g = 10f64.powf(-m.a_db[i][rx] / 20.0);
        for (o, s) in out.iter_mut().zip(&b.samples) {
            *o += s * g;
        }
    }
    if let Some(n0) = noise_floor_dbm_hz {
        let power_mw = 10f64.powf((n0 + 10.0 * rate.log10()) / 10.0);
        let sd = (power_mw / 2.0).sqrt();
        for o in &mut out {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *o += Complex64::new(re * sd, im * sd);
        }
    }
    Ok(IqBuffer::new(out, rate))
}

/// Mean sample power in dBm.
pub fn mean_power_dbm(buf: &IqBuffer) -> f64 {
    if buf.is_empty() {
        return f64::NEG_INFINITY;
    }
    10.0 * (buf.energy() / buf.len() as f64).log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineStep {
    pub t_s: f64,
    pub matrix: AttenuationMatrix,
    /// One stream per radio that is not transmitting, in scenario order.
    pub rx: Vec<(String, IqBuffer)>,
}

/// Steps at t = 0, step, 2·step, … strictly before `duration_s`. The same
/// transmit buffers play at every step. Noise comes from one generator
/// drawn in step order, then receiver order.
pub fn run_timeline(
    sc: &ChannelScenario,
    duration_s: f64,
    step_s: f64,
    tx: &[(String, IqBuffer)],
    seed: u64,
) -> Result<Vec<TimelineStep>, ChanemError> {
    if !(step_s > 0.0 && step_s.is_finite()) {
        return Err(ChanemError::Scenario(format!("step {step_s} s must be positive")));
    }
    if !(duration_s >= 0.0 && duration_s.is_finite()) {
        return Err(ChanemError::Scenario(format!("duration {duration_s} s must be non-negative")));
    }
    sc.validate()?;
    for (id, _) in tx {
        if sc.radio(id).is_none() {
            return Err(ChanemError::Scenario(format!("transmitter {id} not in scenario")));
        }
    }
    let receivers: Vec<&str> = sc
        .radios
        .iter()
        .map(|r| r.id.as_str())
        .filter(|id| !tx.iter().any(|(t, _)| t == id))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::new();
    let mut k = 0u64;
    loop {
        let t_s = k as f64 * step_s;
        if t_s >= duration_s {
            break;
        }
        let matrix = attenuation_at(sc, t_s)?;
        let mut rx = Vec::with_capacity(receivers.len());
        for id in &receivers {
            let buf = apply_with_rng(tx, &matrix, id, sc.noise_floor_dbm_hz, &mut rng)?;
            rx.push((id.to_string(), buf));
        }
        steps.push(TimelineStep { t_s, matrix, rx });
        k += 1;
    }
    Ok(steps)
}
