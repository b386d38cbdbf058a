//! Record log lines.
//!
//! One record per line, six tab-separated fields, `\n` terminated, UTF-8:
//!
//! ```text
//! <t_utc_us>\t<node_id>\t<location>\t<freq_hz>\t<azimuth_deg>\t<value_dbm>\n
//! ```
//!
//! * `t_utc_us` is a signed decimal count of microseconds since the Unix epoch.
//! * `location` is `xyz:<x>,<y>,<z>` in meters or `label:<text>`.
//! * Floats are written as the shortest decimal that parses back to the same
//!   `f64`, so every line round-trips bit for bit.
//! * `node_id` and labels may not contain tabs, newlines or carriage returns.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Xyz([f64; 3]),
    Label(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    /// Microseconds since the Unix epoch, UTC.
    pub t_utc_us: i64,
    pub node_id: String,
    pub location: Location,
    pub freq_hz: f64,
    pub azimuth_deg: f64,
    pub value_dbm: f64,
}

fn clean(s: &str) -> bool {
    !s.is_empty() && !s.contains(['\t', '\n', '\r'])
}

impl ExperimentRecord {
    pub fn validate(&self) -> Result<(), String> {
        if !clean(&self.node_id) {
            return Err(format!("node id {:?} is empty or holds a tab or newline", self.node_id));
        }
        match &self.location {
            Location::Xyz(p) if p.iter().any(|c| !c.is_finite()) => {
                return Err("location has a non-finite coordinate".into())
            }
            Location::Label(l) if !clean(l) => {
                return Err(format!("location label {l:?} is empty or holds a tab or newline"))
            }
            _ => {}
        }
        if !(self.freq_hz > 0.0 && self.freq_hz.is_finite()) {
            return Err(format!("freq_hz {} must be positive", self.freq_hz));
        }
        if !(0.0..360.0).contains(&self.azimuth_deg) {
            return Err(format!("azimuth_deg {} must lie in [0, 360)", self.azimuth_deg));
        }
        if !self.value_dbm.is_finite() {
            return Err(format!("value_dbm {} must be finite", self.value_dbm));
        }
        Ok(())
    }

    pub fn to_line(&self) -> String {
        let location = match &self.location {
            Location::Xyz([x, y, z]) => format!("xyz:{x:?},{y:?},{z:?}"),
            Location::Label(l) => format!("label:{l}"),
        };
        format!(
            "{}\t{}\t{}\t{:?}\t{:?}\t{:?}\n",
            self.t_utc_us, self.node_id, location, self.freq_hz, self.azimuth_deg, self.value_dbm
        )
    }

    /// Parses one line, with or without its trailing newline.
    pub fn from_line(line: &str) -> Result<ExperimentRecord, String> {
        let line = line.strip_suffix('\n').unwrap_or(line);
        let fields: Vec<&str> = line.split('\t').collect();
        let [t, node, location, freq, az, value] = fields[..] else {
            return Err(format!("expected 6 fields, found {}", fields.len()));
        };
        let num = |name: &str, v: &str| v.parse::<f64>().map_err(|_| format!("bad {name} {v:?}"));
        let location = if let Some(xyz) = location.strip_prefix("xyz:") {
            let parts = xyz
                .split(',')
                .map(|c| num("coordinate", c))
                .collect::<Result<Vec<_>, _>>()?;
            let [x, y, z] = parts[..] else {
                return Err(format!("location {location:?} needs three coordinates"));
            };
            Location::Xyz([x, y, z])
        } else if let Some(label) = location.strip_prefix("label:") {
            Location::Label(label.to_string())
        } else {
            return Err(format!("bad location {location:?}"));
        };
        let rec = ExperimentRecord {
            t_utc_us: t.parse().map_err(|_| format!("bad time {t:?}"))?,
            node_id: node.to_string(),
            location,
            freq_hz: num("frequency", freq)?,
            azimuth_deg: num("azimuth", az)?,
            value_dbm: num("value", value)?,
        };
        rec.validate()?;
        Ok(rec)
    }
}
