use std::sync::Arc;

use cornet_core::inventory::{Inventory, RfPath};
use cornet_core::scheduler::{
    Channel, ComputeSpec, MemoryJournal, NetworkSpec, NullJournal, RadioSpec, Reservation,
    ReservationState, ResourceSpec, Scheduler, SchedulerConfig, SurveyResponses,
};
use cornet_core::{ReservationId, Timestamp, TimeWindow};
use proptest::prelude::*;

const H: i64 = 3600;

#[derive(Debug, Clone)]
enum Op {
    Request {
        start_h: i64,
        hours: i64,
        n_usrps: u32,
        emulator: bool,
        channel: Option<(u8, u8)>,
        cores: u32,
        ram_gb: u64,
        net_gbps: u8,
    },
    Evaluate(usize),
    Review(usize, bool),
    Activate(usize, i64),
    Complete(usize, i64),
    Cancel(usize),
    Survey(usize),
    Expire(i64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => (0i64..48, 1i64..30, 0u32..4, any::<bool>(), proptest::option::of((0u8..6, 1u8..4)),
              0u32..40, 0u64..200, 0u8..40)
            .prop_map(|(start_h, hours, n_usrps, emulator, channel, cores, ram_gb, net_gbps)| Op::Request {
                start_h, hours, n_usrps, emulator, channel, cores, ram_gb, net_gbps,
            }),
        6 => any::<usize>().prop_map(Op::Evaluate),
        3 => (any::<usize>(), any::<bool>()).prop_map(|(i, a)| Op::Review(i, a)),
        3 => (any::<usize>(), 0i64..H).prop_map(|(i, d)| Op::Activate(i, d)),
        2 => (any::<usize>(), 0i64..4 * H).prop_map(|(i, d)| Op::Complete(i, d)),
        1 => any::<usize>().prop_map(Op::Cancel),
        1 => any::<usize>().prop_map(Op::Survey),
        1 => (0i64..1200).prop_map(Op::Expire),
    ]
}

fn spec_of(n_usrps: u32, emulator: bool, channel: Option<(u8, u8)>, cores: u32, ram_gb: u64, net_gbps: u8) -> ResourceSpec {
    let channels = match channel {
        Some((slot, width)) if n_usrps > 0 => vec![Channel {
            center_hz: 2000e6 + slot as f64 * 10e6,
            bw_hz: width as f64 * 10e6,
        }],
        _ => Vec::new(),
    };
    ResourceSpec {
        compute: ComputeSpec {
            cpu_cores: cores,
            ram_gb,
            ..Default::default()
        },
        radio: RadioSpec {
            n_usrps,
            channels,
            path: if emulator { RfPath::Emulator } else { RfPath::OverTheAir },
        },
        network: NetworkSpec {
            requested_bps: net_gbps as f64 * 1e9,
        },
    }
}

fn nth(s: &Scheduler, i: usize) -> Option<ReservationId> {
    let n = s.reservations().count();
    (n > 0).then(|| s.reservations().nth(i % n).unwrap().id.clone())
}

fn run(s: &mut Scheduler, ops: &[Op]) {
    let t0 = 1_800_000_000i64;
    for op in ops {
        match op.clone() {
            Op::Request { start_h, hours, n_usrps, emulator, channel, cores, ram_gb, net_gbps } => {
                let w = TimeWindow::new(t0 + start_h * H, t0 + (start_h + hours) * H);
                let spec = spec_of(n_usrps, emulator, channel, cores, ram_gb, net_gbps);
                let _ = s.request_reservation("u", w, spec, Timestamp(t0));
            }
            Op::Evaluate(i) => {
                if let Some(id) = nth(s, i) {
                    let _ = s.evaluate_admission(&id, Timestamp(t0));
                }
            }
            Op::Review(i, approve) => {
                if let Some(id) = nth(s, i) {
                    let _ = s.review_decision(&id, "root", approve, Timestamp(t0));
                }
            }
            Op::Activate(i, d) => {
                if let Some(id) = nth(s, i) {
                    let start = s.get(&id).unwrap().window.start_utc;
                    let _ = s.activate(&id, "u", start.plus(d));
                }
            }
            Op::Complete(i, d) => {
                if let Some(id) = nth(s, i) {
                    if let Some(at) = s.get(&id).unwrap().activated_utc {
                        let _ = s.complete(&id, "u", at.plus(d));
                    }
                }
            }
            Op::Cancel(i) => {
                if let Some(id) = nth(s, i) {
                    let at = s.get(&id).unwrap().activated_utc.unwrap_or(Timestamp(t0));
                    let _ = s.cancel(&id, "u", "user", at.plus(1));
                }
            }
            Op::Survey(i) => {
                if let Some(id) = nth(s, i) {
                    let _ = s.submit_survey(&id, SurveyResponses::default(), Timestamp(t0 + 100 * H));
                }
            }
            Op::Expire(d) => {
                let _ = s.expire_tentative(Timestamp(t0 + d));
            }
        }
    }
}

fn holds(r: &Reservation) -> bool {
    matches!(r.state, ReservationState::Confirmed | ReservationState::Active)
}

/// Brute-force check: at every instant where some committed reservation
/// starts, the concurrent radio demand on each path fits its pool, and no two
/// concurrent over-the-air reservations share spectrum.
fn double_booking_violations(s: &Scheduler) -> Vec<String> {
    let inv = s.inventory();
    let committed: Vec<&Reservation> = s.reservations().filter(|r| holds(r)).collect();
    let mut bad = Vec::new();
    for probe in &committed {
        let t = probe.window.start_utc.0;
        for path in [RfPath::OverTheAir, RfPath::Emulator] {
            let pool = inv.sdr_devices.iter().filter(|d| d.attachment == path).count() as u32;
            let used: u32 = committed
                .iter()
                .filter(|r| r.spec.radio.path == path)
                .filter(|r| r.window.start_utc.0 <= t && t < r.window.end_utc.0)
                .map(|r| r.spec.radio.n_usrps)
                .sum();
            if used > pool {
                bad.push(format!("{path:?} demand {used} > {pool} at {t}"));
            }
        }
    }
    for (i, a) in committed.iter().enumerate() {
        for b in &committed[i + 1..] {
            let overlap = a.window.start_utc < b.window.end_utc && b.window.start_utc < a.window.end_utc;
            if !overlap || a.spec.radio.path != RfPath::OverTheAir || b.spec.radio.path != RfPath::OverTheAir {
                continue;
            }
            for ca in &a.spec.radio.channels {
                for cb in &b.spec.radio.channels {
                    if ca.center_hz - ca.bw_hz / 2.0 < cb.center_hz + cb.bw_hz / 2.0
                        && cb.center_hz - cb.bw_hz / 2.0 < ca.center_hz + ca.bw_hz / 2.0
                    {
                        bad.push(format!("{} and {} share spectrum", a.id, b.id));
                    }
                }
            }
        }
    }
    // Bound devices are exclusive.
    let mut seen = std::collections::BTreeSet::new();
    for alloc in s.allocator().live() {
        for d in &alloc.devices {
            if !seen.insert(d.clone()) {
                bad.push(format!("device {d} bound twice"));
            }
        }
    }
    bad
}

fn small_inventory() -> Inventory {
    let mut inv = Inventory::testbed_default();
    // Keep the pools small so random requests collide often.
    inv.sdr_devices.retain(|d| ["rrh-1", "rrh-2", "emu-1"].contains(&d.node_id.as_str()));
    inv.compute_nodes.truncate(3);
    inv
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn no_double_booking_and_legal_audits(ops in proptest::collection::vec(op(), 1..120)) {
        let mut s = Scheduler::in_memory(Arc::new(small_inventory()));
        run(&mut s, &ops);
        let bad = double_booking_violations(&s);
        prop_assert!(bad.is_empty(), "{bad:?}");
        for r in s.reservations() {
            prop_assert!(r.audit_is_legal(), "illegal audit for {}: {:?}", r.id, r.audit);
            prop_assert!(r.window.start_utc < r.window.end_utc);
            prop_assert_eq!(r.survey.is_some(), r.state == ReservationState::Completed);
        }
    }

    #[test]
    fn surveys_match_completions_and_pools_are_conserved(ops in proptest::collection::vec(op(), 1..120)) {
        let inv = small_inventory();
        let mut s = Scheduler::in_memory(Arc::new(inv));
        run(&mut s, &ops);
        let completed = s.reservations().filter(|r| r.state == ReservationState::Completed).count();
        prop_assert_eq!(s.surveys().count(), completed);
        for account in s.allocator().accounting() {
            prop_assert!((account.free + account.held - account.total).abs() < 1e-6, "{account:?}");
        }
        for u in s.usage() {
            let r = s.get(&u.reservation_id).unwrap();
            let wall = r.ended_utc.unwrap().seconds_since(r.activated_utc.unwrap());
            prop_assert!(u.actual_seconds <= wall);
        }
    }

    #[test]
    fn replay_reproduces_state(ops in proptest::collection::vec(op(), 1..80)) {
        let inv = Arc::new(small_inventory());
        let journal = MemoryJournal::new();
        let mut s = Scheduler::new(inv.clone(), SchedulerConfig::default(), Box::new(journal.clone()));
        run(&mut s, &ops);
        let entries = journal.entries();
        // Through the on-disk encoding as well.
        let text: Vec<String> = entries.iter().map(|e| serde_json::to_string(e).unwrap()).collect();
        let decoded: Vec<_> = text.iter().map(|l| serde_json::from_str(l).unwrap()).collect();
        let replayed = Scheduler::replay(inv, SchedulerConfig::default(), &decoded, Box::new(NullJournal)).unwrap();
        prop_assert_eq!(replayed.snapshot(), s.snapshot());
    }

    #[test]
    fn shrinking_a_confirmed_request_never_denies_it(
        ops in proptest::collection::vec(op(), 1..60),
        candidate in (0i64..48, 1i64..30, 0u32..4, any::<bool>(), proptest::option::of((0u8..6, 1u8..4)), 0u32..60, 0u64..300, 0u8..20),
        shrink in (0i64..100, 0i64..100, 0u32..4, 0u32..60, 0u64..300, 0u8..20, any::<bool>()),
    ) {
        let mut s = Scheduler::in_memory(Arc::new(small_inventory()));
        run(&mut s, &ops);
        let (start_h, hours, n, emu, ch, cores, ram, net) = candidate;
        let t0 = 1_800_000_000i64;
        let w = TimeWindow::new(t0 + start_h * H, t0 + (start_h + hours) * H);
        let Ok(r) = s.request_reservation("c", w, spec_of(n, emu, ch, cores, ram, net), Timestamp(t0)) else {
            return Ok(());
        };
        let (outcome, _) = s.admission_for(&r);
        prop_assume!(outcome == cornet_core::scheduler::Admission::Confirmed);

        let (cut_front, cut_back, dn, dc, dr, dnet, drop_channel) = shrink;
        let span = w.duration_s();
        let front = cut_front * (span - 1) / 200;
        let back = cut_back * (span - 1 - front) / 100;
        let mut smaller = r.clone();
        smaller.window = TimeWindow::new(w.start_utc.0 + front, w.end_utc.0 - back);
        smaller.spec.radio.n_usrps = n.saturating_sub(dn);
        if smaller.spec.radio.n_usrps == 0 || drop_channel {
            smaller.spec.radio.channels.clear();
        }
        smaller.spec.compute.cpu_cores = cores.saturating_sub(dc);
        smaller.spec.compute.ram_gb = ram.saturating_sub(dr);
        smaller.spec.network.requested_bps = (net.saturating_sub(dnet)) as f64 * 1e9;
        prop_assert!(smaller.window.is_well_formed());
        let (shrunk, conflicts) = s.admission_for(&smaller);
        prop_assert_ne!(shrunk, cornet_core::scheduler::Admission::Denied, "{:?}", conflicts);
    }
}
