use serde::{Deserialize, Serialize};

use crate::allocator::compute_feasible;
use crate::inventory::{Inventory, RfPath};
use crate::{ReservationId, Timestamp};

use super::{Channel, Reservation, ReservationState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConflictKind {
    /// Concurrent radio demand on one RF path exceeds the pool.
    Devices { path: RfPath, demanded: u32, pool: u32 },
    /// Over-the-air channels overlap in frequency during overlapping windows.
    Spectrum { channel: Channel, other: Channel },
    /// Concurrent compute demands cannot be placed together.
    Compute,
    /// Summed network demand exceeds the fabric.
    Network { demanded_bps: f64, capacity_bps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conflict {
    #[serde(flatten)]
    pub kind: ConflictKind,
    /// Reservations sharing the contended resource with the candidate.
    pub with: Vec<ReservationId>,
    /// Earliest instant at which the demand cannot be met.
    pub at: Timestamp,
}

/// Conflicts between `candidate` and the live (non-terminal) reservations in
/// `calendar` whose windows overlap it. Tentative holds only count against
/// candidates requested after them.
///
/// Aggregate demands are checked at every instant where the set of
/// concurrent reservations changes inside the candidate's window, so two
/// reservations that overlap the candidate but not each other are never
/// summed together.
pub fn detect_conflicts<'a>(
    candidate: &Reservation,
    calendar: impl IntoIterator<Item = &'a Reservation>,
    inv: &Inventory,
) -> Vec<Conflict> {
    let others: Vec<&Reservation> = calendar
        .into_iter()
        .filter(|r| r.id != candidate.id && !r.state.is_terminal())
        .filter(|r| r.state != ReservationState::Tentative || r.id < candidate.id)
        .filter(|r| r.window.overlaps(&candidate.window))
        .collect();
    let mut conflicts = Vec::new();

    if candidate.spec.radio.path == RfPath::OverTheAir {
        for other in &others {
            if other.spec.radio.path != RfPath::OverTheAir {
                continue;
            }
            let clash = candidate.spec.radio.channels.iter().find_map(|a| {
                other
                    .spec
                    .radio
                    .channels
                    .iter()
                    .find(|b| a.overlaps(b))
                    .map(|b| (*a, *b))
            });
            if let Some((channel, other_ch)) = clash {
                conflicts.push(Conflict {
                    kind: ConflictKind::Spectrum {
                        channel,
                        other: other_ch,
                    },
                    with: vec![other.id.clone()],
                    at: candidate.window.start_utc.max(other.window.start_utc),
                });
            }
        }
    }

    let mut points = vec![candidate.window.start_utc];
    points.extend(
        others
            .iter()
            .map(|r| r.window.start_utc)
            .filter(|&t| t > candidate.window.start_utc && t < candidate.window.end_utc),
    );
    points.sort();
    points.dedup();

    let path = candidate.spec.radio.path;
    let pool = inv.devices_on(path).count() as u32;
    let capacity_bps = inv.fabric.capacity_bps();
    let (mut devices_done, mut network_done, mut compute_done) = (false, false, false);

    for t in points {
        let concurrent: Vec<&Reservation> = others
            .iter()
            .copied()
            .filter(|r| r.window.contains(t))
            .collect();
        let ids = |f: &dyn Fn(&Reservation) -> bool| -> Vec<ReservationId> {
            concurrent.iter().filter(|r| f(r)).map(|r| r.id.clone()).collect()
        };

        if !devices_done && candidate.spec.radio.n_usrps > 0 {
            let demanded = candidate.spec.radio.n_usrps
                + concurrent
                    .iter()
                    .filter(|r| r.spec.radio.path == path)
                    .map(|r| r.spec.radio.n_usrps)
                    .sum::<u32>();
            if demanded > pool {
                devices_done = true;
                conflicts.push(Conflict {
                    kind: ConflictKind::Devices { path, demanded, pool },
                    with: ids(&|r| r.spec.radio.path == path && r.spec.radio.n_usrps > 0),
                    at: t,
                });
            }
        }

        if !network_done && candidate.spec.network.requested_bps > 0.0 {
            let demanded_bps = candidate.spec.network.requested_bps
                + concurrent.iter().map(|r| r.spec.network.requested_bps).sum::<f64>();
            if demanded_bps > capacity_bps {
                network_done = true;
                conflicts.push(Conflict {
                    kind: ConflictKind::Network {
                        demanded_bps,
                        capacity_bps,
                    },
                    with: ids(&|r| r.spec.network.requested_bps > 0.0),
                    at: t,
                });
            }
        }

        if !compute_done && !candidate.spec.compute.is_empty() {
            let with_compute: Vec<&Reservation> = concurrent
                .iter()
                .copied()
                .filter(|r| !r.spec.compute.is_empty())
                .collect();
            if !with_compute.is_empty() {
                let mut demands = vec![&candidate.spec.compute];
                demands.extend(with_compute.iter().map(|r| &r.spec.compute));
                if !compute_feasible(inv, &demands) {
                    compute_done = true;
                    conflicts.push(Conflict {
                        kind: ConflictKind::Compute,
                        with: with_compute.iter().map(|r| r.id.clone()).collect(),
                        at: t,
                    });
                }
            }
        }
    }
    conflicts
}
