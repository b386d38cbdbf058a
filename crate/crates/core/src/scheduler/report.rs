use serde::{Deserialize, Serialize};

use crate::inventory::Inventory;
use crate::Timestamp;

use super::{Reservation, ReservationState};

/// Time-weighted occupancy of each resource class over one bucket, as a
/// fraction of the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationBucket {
    pub start_utc: Timestamp,
    pub end_utc: Timestamp,
    pub devices: f64,
    pub cores: f64,
    pub ram_gb: f64,
    pub storage_gb: f64,
    pub network_bps: f64,
}

/// Interval during which a reservation holds (or is committed to hold) its
/// resources: the scheduled window while Confirmed, the activation time
/// onwards while Active, and the actual usage span once it has ended.
fn holding_interval(r: &Reservation) -> Option<(i64, i64)> {
    match r.state {
        ReservationState::Confirmed => Some((r.window.start_utc.0, r.window.end_utc.0)),
        ReservationState::Active => {
            let start = r.activated_utc?.0;
            Some((start, r.window.end_utc.0.max(start)))
        }
        ReservationState::Completed | ReservationState::Cancelled => {
            Some((r.activated_utc?.0, r.ended_utc?.0))
        }
        _ => None,
    }
}

/// Splits `[from, to)` into buckets of `bucket_s` seconds (the last may be
/// shorter) and reports time-weighted occupancy per class. Returns nothing
/// for an empty range or a non-positive bucket width.
pub fn utilization_report<'a>(
    calendar: impl IntoIterator<Item = &'a Reservation>,
    inv: &Inventory,
    from: Timestamp,
    to: Timestamp,
    bucket_s: i64,
) -> Vec<UtilizationBucket> {
    if bucket_s <= 0 || from >= to {
        return Vec::new();
    }
    let holds: Vec<(i64, i64, &Reservation)> = calendar
        .into_iter()
        .filter_map(|r| holding_interval(r).map(|(s, e)| (s, e, r)))
        .filter(|(s, e, _)| s < e)
        .collect();

    let pool_devices = inv.sdr_devices.len() as f64;
    let pool_cores: f64 = inv.compute_nodes.iter().map(|n| n.cores as f64).sum();
    let pool_ram: f64 = inv.compute_nodes.iter().map(|n| n.ram_gb as f64).sum();
    let pool_storage: f64 = inv.compute_nodes.iter().map(|n| n.storage_gb as f64).sum();
    let pool_net = inv.fabric.capacity_bps();
    let ratio = |held: f64, pool: f64| if pool > 0.0 { held / pool } else { 0.0 };

    let mut out = Vec::new();
    let mut start = from.0;
    while start < to.0 {
        let end = (start + bucket_s).min(to.0);
        let width = (end - start) as f64;
        let mut acc = [0.0f64; 5];
        for &(s, e, r) in &holds {
            let overlap = (e.min(end) - s.max(start)).max(0) as f64;
            if overlap == 0.0 {
                continue;
            }
            let w = overlap / width;
            acc[0] += w * r.spec.radio.n_usrps as f64;
            acc[1] += w * r.spec.compute.cpu_cores as f64;
            acc[2] += w * r.spec.compute.ram_gb as f64;
            acc[3] += w * r.spec.compute.storage_gb as f64;
            acc[4] += w * r.spec.network.requested_bps;
        }
        out.push(UtilizationBucket {
            start_utc: Timestamp(start),
            end_utc: Timestamp(end),
            devices: ratio(acc[0], pool_devices),
            cores: ratio(acc[1], pool_cores),
            ram_gb: ratio(acc[2], pool_ram),
            storage_gb: ratio(acc[3], pool_storage),
            network_bps: ratio(acc[4], pool_net),
        });
        start = end;
    }
    out
}
