use std::collections::BTreeMap;

use cornet_core::datamgr::{ConfigSnapshot, DataStore, ExperimentRecord, Location, QueryFilter};
use cornet_core::scheduler::{Reservation, ReservationState, ResourceSpec};
use cornet_core::{ReservationId, TimeWindow, Timestamp};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn active() -> Reservation {
    let mut r = Reservation::new(ReservationId::from_seq(1), "u".into(), TimeWindow::new(0, 60), ResourceSpec::default());
    r.state = ReservationState::Active;
    r
}

fn snapshot(r: &Reservation) -> ConfigSnapshot {
    ConfigSnapshot {
        inventory_hash: "0".repeat(64),
        reservation_id: r.id.clone(),
        scenario_hash: None,
        software: vec!["GNUradio".into()],
        sample_formats: Vec::new(),
        created_utc: Timestamp(0),
    }
}

/// Per-node clocks that only move forward, interleaved at random.
fn records(max: usize) -> impl Strategy<Value = Vec<ExperimentRecord>> {
    proptest::collection::vec((0usize..4, 0i64..50, 1u32..40, 0u32..3600, -900i32..0, any::<bool>()), 0..max).prop_map(
        |raw| {
            let mut clock = [0i64; 4];
            raw.into_iter()
                .map(|(node, dt, freq, az, value, label)| {
                    clock[node] += dt;
                    ExperimentRecord {
                        t_utc_us: clock[node],
                        node_id: format!("node-{node}"),
                        location: if label {
                            Location::Label(format!("room {node}"))
                        } else {
                            Location::Xyz([node as f64, 0.5, 2.0])
                        },
                        freq_hz: freq as f64 * 100e6,
                        azimuth_deg: az as f64 / 10.0,
                        value_dbm: value as f64 / 10.0,
                    }
                })
                .collect()
        },
    )
}

fn filter() -> impl Strategy<Value = QueryFilter> {
    (
        proptest::option::of(0i64..400),
        proptest::option::of(0i64..800),
        proptest::option::of(0usize..5),
        proptest::option::of(0u32..40),
        proptest::option::of(0u32..40),
        proptest::option::of(0u32..360),
        proptest::option::of(0u32..360),
    )
        .prop_map(|(t0, t1, node, f0, f1, a0, a1)| QueryFilter {
            t_from_us: t0,
            t_to_us: t1,
            node_id: node.map(|n| format!("node-{n}")),
            freq_from_hz: f0.map(|f| f as f64 * 100e6),
            freq_to_hz: f1.map(|f| f as f64 * 100e6),
            azimuth_from_deg: a0.map(f64::from),
            azimuth_to_deg: a1.map(f64::from),
        })
}

/// Linear scan with every predicate spelled out, then a stable sort.
fn oracle(all: &[ExperimentRecord], f: &QueryFilter) -> Vec<ExperimentRecord> {
    let mut out: Vec<ExperimentRecord> = all
        .iter()
        .filter(|r| {
            let t_ok = f.t_from_us.is_none_or(|a| r.t_utc_us >= a) && f.t_to_us.is_none_or(|b| r.t_utc_us < b);
            let n_ok = f.node_id.as_ref().is_none_or(|n| *n == r.node_id);
            let f_ok = f.freq_from_hz.is_none_or(|a| r.freq_hz >= a) && f.freq_to_hz.is_none_or(|b| r.freq_hz < b);
            let a_ok = match (f.azimuth_from_deg, f.azimuth_to_deg) {
                (Some(a), Some(b)) if a > b => !(r.azimuth_deg >= b && r.azimuth_deg < a),
                (a, b) => a.is_none_or(|a| r.azimuth_deg >= a) && b.is_none_or(|b| r.azimuth_deg < b),
            };
            t_ok && n_ok && f_ok && a_ok
        })
        .cloned()
        .collect();
    out.sort_by(|a, b| (a.t_utc_us, &a.node_id).cmp(&(b.t_utc_us, &b.node_id)));
    out
}

#[test]
fn hundred_thousand_records_match_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut clock = [0i64; 8];
    let all: Vec<ExperimentRecord> = (0..100_000)
        .map(|_| {
            let node = rng.random_range(0..8);
            clock[node] += rng.random_range(0..20);
            ExperimentRecord {
                t_utc_us: clock[node],
                node_id: format!("node-{node}"),
                location: Location::Xyz([node as f64, 0.0, 0.0]),
                freq_hz: rng.random_range(1..60) as f64 * 100e6,
                azimuth_deg: rng.random_range(0..3600) as f64 / 10.0,
                value_dbm: -rng.random_range(0.0..120.0),
            }
        })
        .collect();
    let mut store = DataStore::in_memory();
    let r = active();
    let id = store.open_experiment(&r, snapshot(&r)).unwrap();
    store.append_batch(&id, all.clone()).unwrap();
    assert_eq!(store.query(&id, &QueryFilter::default()).unwrap(), oracle(&all, &QueryFilter::default()));
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    for _ in 0..50 {
        let mut f = filter().new_tree(&mut runner).unwrap().current();
        f.t_from_us = f.t_from_us.map(|t| t * 1000);
        f.t_to_us = f.t_to_us.map(|t| t * 1000);
        assert_eq!(store.query(&id, &f).unwrap(), oracle(&all, &f));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn queries_equal_linear_scan(all in records(400), filters in proptest::collection::vec(filter(), 1..8)) {
        let mut store = DataStore::in_memory();
        let r = active();
        let id = store.open_experiment(&r, snapshot(&r)).unwrap();
        for rec in &all {
            store.append(&id, rec.clone()).unwrap();
        }
        for f in &filters {
            prop_assert_eq!(store.query(&id, f).unwrap(), oracle(&all, f));
        }
        prop_assert_eq!(store.query(&id, &QueryFilter::default()).unwrap().len(), all.len());
    }

    #[test]
    fn interleaved_nodes_keep_per_node_order(all in records(200)) {
        let mut store = DataStore::in_memory();
        let r = active();
        let id = store.open_experiment(&r, snapshot(&r)).unwrap();
        store.append_batch(&id, all.clone()).unwrap();
        let mut per_node: BTreeMap<&str, Vec<&ExperimentRecord>> = BTreeMap::new();
        for rec in &all {
            per_node.entry(&rec.node_id).or_default().push(rec);
        }
        for (node, expect) in per_node {
            let mut expect: Vec<ExperimentRecord> = expect.into_iter().cloned().collect();
            expect.sort_by_key(|r| r.t_utc_us);
            let got = store.query(&id, &QueryFilter { node_id: Some(node.to_string()), ..Default::default() }).unwrap();
            prop_assert_eq!(got, expect);
        }
    }

    #[test]
    fn reopened_store_loses_nothing(all in records(120), split in 0usize..120) {
        let dir = tempfile::tempdir().unwrap();
        let r = active();
        let split = split.min(all.len());
        let (id, digest) = {
            let mut store = DataStore::open(dir.path()).unwrap();
            let id = store.open_experiment(&r, snapshot(&r)).unwrap();
            store.append_batch(&id, all[..split].to_vec()).unwrap();
            for rec in &all[split..] {
                store.append(&id, rec.clone()).unwrap();
            }
            let mut mem = DataStore::in_memory();
            let mid = mem.open_experiment(&r, snapshot(&r)).unwrap();
            mem.append_batch(&mid, all.clone()).unwrap();
            (id, mem.seal(&mid).unwrap())
        };
        let mut store = DataStore::open(dir.path()).unwrap();
        prop_assert_eq!(store.get(&id).unwrap().records(), &all[..]);
        // The digest depends only on contents, not on storage mode.
        prop_assert_eq!(store.seal(&id).unwrap(), digest);
    }

    #[test]
    fn one_record_changes_the_digest(all in records(60).prop_filter("non-empty", |v| !v.is_empty()), pick in any::<usize>(), delta in 1i32..100) {
        let r = active();
        let seal = |recs: Vec<ExperimentRecord>| {
            let mut store = DataStore::in_memory();
            let id = store.open_experiment(&r, snapshot(&r)).unwrap();
            store.append_batch(&id, recs).unwrap();
            store.seal(&id).unwrap()
        };
        let mut perturbed = all.clone();
        let i = pick % perturbed.len();
        perturbed[i].value_dbm += delta as f64 / 1000.0;
        prop_assert_eq!(seal(all.clone()), seal(all.clone()));
        prop_assert_ne!(seal(all.clone()), seal(perturbed));
        prop_assert_ne!(seal(all.clone()), seal(all[..all.len() - 1].to_vec()));
    }
}
