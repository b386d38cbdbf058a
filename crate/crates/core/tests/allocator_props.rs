use std::collections::BTreeMap;
use std::sync::Arc;

use cornet_core::allocator::{plan_spectrum_slots, Allocator, SlotRequest, SpectrumBlock};
use cornet_core::inventory::{Inventory, RfPath};
use cornet_core::scheduler::{Channel, ComputeSpec, NetworkSpec, RadioSpec, Reservation, ReservationState, ResourceSpec};
use cornet_core::{ReservationId, TimeWindow};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Bind { n: u32, emulator: bool, channels: Vec<(i8, u8)>, cores: u32, ram: u64, gbps: u16 },
    Release(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0u32..3, any::<bool>(), proptest::collection::vec((-12i8..12, 1u8..8), 0..3), 0u32..60, 0u64..300, 0u16..200)
            .prop_map(|(n, emulator, channels, cores, ram, gbps)| Op::Bind { n, emulator, channels, cores, ram, gbps }),
        2 => any::<usize>().prop_map(Op::Release),
    ]
}

fn confirmed(seq: u64, spec: ResourceSpec) -> Reservation {
    let mut r = Reservation::new(ReservationId::from_seq(seq), "u".into(), TimeWindow::new(0, 3600), spec);
    r.state = ReservationState::Confirmed;
    r
}

fn check_invariants(a: &Allocator, inv: &Inventory) -> Result<(), TestCaseError> {
    for account in a.accounting() {
        prop_assert!(
            (account.free + account.held - account.total).abs() <= 1e-6 * account.total.max(1.0),
            "{account:?}"
        );
        prop_assert!(account.free >= -1e-6);
    }
    let mut owner = BTreeMap::new();
    let mut per_host: BTreeMap<&str, (u32, u64)> = BTreeMap::new();
    for alloc in a.live() {
        for d in &alloc.devices {
            prop_assert!(owner.insert(d.clone(), alloc.reservation_id.clone()).is_none());
            prop_assert_eq!(a.device_owner(d), Some(&alloc.reservation_id));
        }
        for vm in &alloc.vm_placements {
            let e = per_host.entry(vm.compute_node_id.as_str()).or_default();
            e.0 += vm.cores;
            e.1 += vm.ram_gb;
        }
    }
    for (host, (cores, ram)) in per_host {
        let node = inv.compute_node(host).unwrap();
        prop_assert!(cores <= node.cores && ram <= node.ram_gb);
    }
    for block in a.blocks() {
        prop_assert!(block.check().is_ok(), "{:?}", block.check());
        for s in &block.slots {
            prop_assert!(s.slot_rate_sps >= s.bw_hz);
            let ratio = block.sample_rate_sps / s.slot_rate_sps;
            prop_assert!((ratio - ratio.round()).abs() < 1e-9);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn random_bind_release_conserves_pools(ops in proptest::collection::vec(op(), 1..200)) {
        let inv = Arc::new(Inventory::testbed_default());
        let mut a = Allocator::new(inv.clone());
        let mut live: Vec<ReservationId> = Vec::new();
        for (seq, op) in ops.into_iter().enumerate() {
            match op {
                Op::Bind { n, emulator, channels, cores, ram, gbps } => {
                    let channels = if n == 0 { Vec::new() } else {
                        channels.into_iter().map(|(o, w)| Channel {
                            center_hz: 2400e6 + o as f64 * 10e6,
                            bw_hz: w as f64 * 5e6,
                        }).collect()
                    };
                    let spec = ResourceSpec {
                        compute: ComputeSpec { cpu_cores: cores, ram_gb: ram, ..Default::default() },
                        radio: RadioSpec {
                            n_usrps: n,
                            channels,
                            path: if emulator { RfPath::Emulator } else { RfPath::OverTheAir },
                        },
                        network: NetworkSpec { requested_bps: gbps as f64 * 1e9 },
                    };
                    let res = confirmed(seq as u64 + 1, spec);
                    let before = a.accounting();
                    match a.bind(&res) {
                        Ok(_) => live.push(res.id),
                        // A failed bind leaves no trace.
                        Err(_) => prop_assert_eq!(a.accounting(), before),
                    }
                }
                Op::Release(i) => {
                    if !live.is_empty() {
                        let id = live.remove(i % live.len());
                        prop_assert!(a.release(&id));
                        prop_assert!(!a.release(&id));
                    }
                }
            }
            check_invariants(&a, &inv)?;
        }
        for id in live {
            a.release(&id);
        }
        prop_assert_eq!(a.blocks().count(), 0);
        for account in a.accounting() {
            prop_assert_eq!(account.held, 0.0);
            prop_assert_eq!(account.free, account.total);
        }
    }

    #[test]
    fn slot_planner_honors_preference_or_first_fit(
        existing in proptest::collection::vec((-150i32..150, 1u32..60), 0..5),
        bw_mhz in 1u32..80,
        pref in proptest::option::of(-150i32..150),
    ) {
        let mut block = SpectrumBlock::new("n", 2400e6, 320e6);
        for (i, (o, w)) in existing.into_iter().enumerate() {
            let req = SlotRequest {
                bw_hz: w as f64 * 1e6,
                preferred_offset_hz: Some(o as f64 * 1e6),
                owner: ReservationId::from_seq(i as u64 + 1),
            };
            if block.fits(o as f64 * 1e6, w as f64 * 1e6) {
                let slot = plan_spectrum_slots(&block, &req).unwrap();
                block.slots.push(slot);
            }
        }
        let bw = bw_mhz as f64 * 1e6;
        let req = SlotRequest { bw_hz: bw, preferred_offset_hz: pref.map(|p| p as f64 * 1e6), owner: ReservationId::from_seq(99) };
        match plan_spectrum_slots(&block, &req) {
            Ok(slot) => {
                prop_assert!(block.fits(slot.offset_hz, bw));
                match pref {
                    Some(p) if block.fits(p as f64 * 1e6, bw) => prop_assert_eq!(slot.offset_hz, p as f64 * 1e6),
                    _ => {
                        // Nothing lower on a 1 kHz grid fits.
                        let mut probe = -block.half_bw() + bw / 2.0;
                        while probe < slot.offset_hz - 1e3 {
                            prop_assert!(!block.fits(probe, bw), "{} fits below {}", probe, slot.offset_hz);
                            probe += 1e3;
                        }
                    }
                }
                let mut grown = block.clone();
                grown.slots.push(slot);
                prop_assert!(grown.check().is_ok());
            }
            Err(_) => {
                let mut probe = -block.half_bw() + bw / 2.0;
                while probe <= block.half_bw() - bw / 2.0 {
                    prop_assert!(!block.fits(probe, bw), "planner missed {}", probe);
                    probe += 1e4;
                }
            }
        }
    }
}
