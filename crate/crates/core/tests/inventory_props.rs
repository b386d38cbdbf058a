use cornet_core::inventory::{
    band_containing, capacity_summary, load_inventory, ComputeNode, Inventory, LicensedBand, NetworkFabric,
    RfPath, SdrDevice,
};
use proptest::prelude::*;

fn inventory() -> impl Strategy<Value = Inventory> {
    let devices = proptest::collection::vec((any::<bool>(), 1u32..3, 1e8f64..6e9, 1e6f64..2e8), 0..12);
    let nodes = proptest::collection::vec((1u32..64, 1u64..512, 0u64..512, 0u64..4000), 0..8);
    let bands = proptest::collection::vec((1e6f64..5e9, 1e5f64..1e9), 0..5);
    (devices, nodes, bands, 1u32..128, 1e8f64..1e11).prop_map(|(devices, nodes, bands, ports, rate)| {
        let sdr_devices = devices
            .into_iter()
            .enumerate()
            .map(|(i, (ota, boards, fmax, bw))| SdrDevice {
                id: format!("sdr-{i}"),
                node_id: format!("node-{}", i / 2),
                attachment: if ota { RfPath::OverTheAir } else { RfPath::Emulator },
                daughterboards: boards,
                max_center_freq_hz: fmax,
                max_instant_bw_hz: bw,
                tx_chains: 2,
                rx_chains: 2,
            })
            .collect();
        let compute_nodes = nodes
            .into_iter()
            .enumerate()
            .map(|(i, (cores, ram, extra, storage))| ComputeNode {
                id: format!("host-{i}"),
                cores,
                clock_ghz: 3.0,
                ram_gb: ram,
                ram_max_gb: ram + extra,
                storage_gb: storage,
            })
            .collect();
        let licensed_bands = bands
            .into_iter()
            .enumerate()
            .map(|(i, (low, width))| LicensedBand {
                low_hz: low,
                high_hz: low + width,
                label: format!("band-{i}"),
            })
            .collect();
        Inventory {
            sdr_devices,
            compute_nodes,
            fabric: NetworkFabric {
                ports,
                port_rate_bps: rate,
                base_latency_ns: 550,
            },
            licensed_bands,
            software_catalog: vec!["GNUradio".into()],
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn serialization_round_trips(inv in inventory()) {
        prop_assert!(inv.validate().is_ok());
        let text = inv.to_toml();
        let back = load_inventory(&text).unwrap();
        prop_assert_eq!(back.content_hash(), inv.content_hash());
        prop_assert_eq!(back, inv);
    }

    #[test]
    fn capacity_totals_match_iteration(inv in inventory()) {
        let report = capacity_summary(&inv);
        let mut cores = 0u64;
        let mut ram = 0u64;
        let mut ram_max = 0u64;
        let mut storage = 0u64;
        for n in &inv.compute_nodes {
            cores += n.cores as u64;
            ram += n.ram_gb;
            ram_max += n.ram_max_gb;
            storage += n.storage_gb;
        }
        prop_assert_eq!(report.total_cores, cores);
        prop_assert_eq!(report.total_ram_gb, ram);
        prop_assert_eq!(report.total_ram_max_gb, ram_max);
        prop_assert_eq!(report.total_storage_gb, storage);
        prop_assert_eq!(report.sdr_devices as usize, inv.sdr_devices.len());
        let ota = inv.sdr_devices.iter().filter(|d| d.attachment == RfPath::OverTheAir).count();
        prop_assert_eq!(report.sdr_devices_ota as usize, ota);
        prop_assert_eq!(report.sdr_devices_emulator as usize, inv.sdr_devices.len() - ota);
        prop_assert_eq!(report.fabric_capacity_bps, inv.fabric.ports as f64 * inv.fabric.port_rate_bps);

        let mut best = 0.0f64;
        let mut nodes = std::collections::BTreeSet::new();
        for d in &inv.sdr_devices {
            nodes.insert(d.node_id.clone());
            let sum: f64 = inv.sdr_devices.iter().filter(|e| e.node_id == d.node_id).map(|e| e.max_instant_bw_hz).sum();
            best = best.max(sum);
        }
        prop_assert_eq!(report.radio_nodes as usize, nodes.len());
        prop_assert!((report.total_instant_bw_per_dual_node_hz - best).abs() <= 1e-6 * best.max(1.0));
    }

    #[test]
    fn band_lookup_matches_linear_scan(inv in inventory(), f in 0f64..7e9) {
        let mut expected = None;
        for b in &inv.licensed_bands {
            if b.low_hz <= f && f <= b.high_hz {
                expected = Some(b);
                break;
            }
        }
        prop_assert_eq!(band_containing(&inv, f), expected);
        for b in &inv.licensed_bands {
            prop_assert!(band_containing(&inv, b.low_hz).is_some());
            prop_assert!(band_containing(&inv, b.high_hz).is_some());
        }
    }
}
