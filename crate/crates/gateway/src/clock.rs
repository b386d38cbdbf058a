use std::sync::atomic::{AtomicI64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use cornet_core::Timestamp;

pub trait Clock: Send + Sync {
    /// Microseconds since the Unix epoch.
    fn now_us(&self) -> i64;

    fn now(&self) -> Timestamp {
        Timestamp(self.now_us().div_euclid(1_000_000))
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_us(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_micros() as i64)
            .unwrap_or(0)
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock {
    us: AtomicI64,
}

impl ManualClock {
    pub fn at(secs: i64) -> ManualClock {
        ManualClock {
            us: AtomicI64::new(secs * 1_000_000),
        }
    }

    pub fn set(&self, secs: i64) {
        self.us.store(secs * 1_000_000, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: i64) {
        self.us.fetch_add(secs * 1_000_000, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_us(&self) -> i64 {
        self.us.load(Ordering::SeqCst)
    }
}
