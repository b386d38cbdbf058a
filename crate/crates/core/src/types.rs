use std::fmt;

use serde::{Deserialize, Serialize};

/// UTC time with one-second resolution, as seconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn now() -> Timestamp {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0);
        Timestamp(secs)
    }

    pub fn seconds_since(self, earlier: Timestamp) -> i64 {
        self.0 - earlier.0
    }

    pub fn plus(self, secs: i64) -> Timestamp {
        Timestamp(self.0 + secs)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Half-open interval `[start_utc, end_utc)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_utc: Timestamp,
    pub end_utc: Timestamp,
}

impl TimeWindow {
    pub fn new(start: i64, end: i64) -> TimeWindow {
        TimeWindow {
            start_utc: Timestamp(start),
            end_utc: Timestamp(end),
        }
    }

    pub fn duration_s(&self) -> i64 {
        self.end_utc.0 - self.start_utc.0
    }

    pub fn overlaps(&self, other: &TimeWindow) -> bool {
        self.start_utc < other.end_utc && other.start_utc < self.end_utc
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.start_utc <= t && t < self.end_utc
    }

    pub fn is_well_formed(&self) -> bool {
        self.start_utc < self.end_utc
    }
}

/// Ordered by length first, so sequential ids sort in issue order past
/// the zero padding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReservationId(pub String);

impl Ord for ReservationId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.0.len(), &self.0).cmp(&(other.0.len(), &other.0))
    }
}

impl PartialOrd for ReservationId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl ReservationId {
    pub fn from_seq(n: u64) -> ReservationId {
        ReservationId(format!("res-{n:06}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ReservationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ReservationId {
    fn from(s: &str) -> Self {
        ReservationId(s.to_owned())
    }
}
