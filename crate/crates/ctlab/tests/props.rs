//! Property tests for the protocol, pool partitioning, broadcast
//! scheduling, and geometry invariants.

use std::collections::BTreeSet;

use ctlab::isolation::split_contiguous;
use ctlab::poi::haversine_km;
use ctlab::pollution::{plan_broadcast, ConcentratorStore};
use ctlab::protocol::{
    derive_identifier, match_exposures, EncounterCode, EncounterRecord, EpochClock,
    ExposureParams, KeyDatabase, TemporaryKey,
};
use ctlab::world::{BtMac, PollutionSettings};
use proptest::prelude::*;

fn clock() -> EpochClock {
    EpochClock::default()
}

proptest! {
    #[test]
    fn derivation_deterministic_and_epoch_sensitive(
        key_bytes in any::<[u8; 16]>(),
        day in 0u64..100,
        e1 in 0u64..96,
        e2 in 0u64..96,
    ) {
        let c = clock();
        let key = TemporaryKey::from_bytes(key_bytes, day);
        let per_day = c.epochs_per_day();
        let a = derive_identifier(&key, day * per_day + e1, &c).unwrap();
        let b = derive_identifier(&key, day * per_day + e2, &c).unwrap();
        prop_assert_eq!(a == b, e1 == e2);
        let again = derive_identifier(&key, day * per_day + e1, &c).unwrap();
        prop_assert_eq!(a, again);
    }

    #[test]
    fn epoch_outside_key_day_always_errors(
        key_bytes in any::<[u8; 16]>(),
        day in 0u64..50,
        other_day in 0u64..50,
        e in 0u64..96,
    ) {
        prop_assume!(day != other_day);
        let c = clock();
        let key = TemporaryKey::from_bytes(key_bytes, day);
        let epoch = other_day * c.epochs_per_day() + e;
        prop_assert!(derive_identifier(&key, epoch, &c).is_err());
    }

    #[test]
    fn keydb_export_import_roundtrips(days in proptest::collection::btree_set(0u64..200, 0..20)) {
        let mut db = KeyDatabase::new();
        for &day in &days {
            let mut bytes = [0u8; 16];
            bytes[..8].copy_from_slice(&day.to_le_bytes());
            db.insert(TemporaryKey::from_bytes(bytes, day));
        }
        let mut buf = Vec::new();
        db.export(&mut buf).unwrap();
        let back = KeyDatabase::import(&buf[..]).unwrap();
        prop_assert_eq!(back.entries(), db.entries());
    }

    #[test]
    fn matching_is_monotone_in_thresholds(
        dists in proptest::collection::vec(0.1f64..20.0, 1..20),
        dwells in proptest::collection::vec(0.1f64..60.0, 1..20),
    ) {
        let c = clock();
        let key = TemporaryKey::from_bytes([9u8; 16], 0);
        let mut db = KeyDatabase::new();
        db.insert(key);
        let n = dists.len().min(dwells.len());
        let records: Vec<EncounterRecord> = (0..n)
            .map(|i| EncounterRecord {
                code: derive_identifier(&key, (i as u64) % 96, &c).unwrap(),
                time: i as f64,
                distance: dists[i],
                dwell: dwells[i],
                receiver: 0,
            })
            .collect();
        let tight = ExposureParams { max_distance: 3.0, min_dwell: 10.0 };
        let loose = ExposureParams { max_distance: 10.0, min_dwell: 1.0 };
        let small = match_exposures(&records, &db, &tight, &c);
        let big = match_exposures(&records, &db, &loose, &c);
        prop_assert!(small.is_subset(&big));
    }

    #[test]
    fn split_contiguous_partitions_exactly(len in 0usize..200, k in 1usize..20) {
        let units: Vec<usize> = (0..len).collect();
        let plan = split_contiguous(&units, k);
        let flat: Vec<usize> = plan.pools.concat();
        prop_assert_eq!(flat, units);
        if len > 0 {
            let sizes: Vec<usize> = plan.pools.iter().map(Vec::len).collect();
            let max = *sizes.iter().max().unwrap();
            let min = *sizes.iter().min().unwrap();
            prop_assert!(max - min <= 1);
            prop_assert!(plan.pools.len() <= k.max(1));
        }
    }

    #[test]
    fn broadcast_gap_never_exceeds_scan_interval(n in 1usize..=10, horizon in 1u64..50) {
        let settings = PollutionSettings::default();
        let pairs: Vec<(BtMac, EncounterCode)> = (0..n as u64)
            .map(|i| (BtMac(i), EncounterCode { id_bytes: [i as u8; 16], epoch_index: 0 }))
            .collect();
        let schedule = plan_broadcast(&pairs, &settings).unwrap();
        let mut last: std::collections::HashMap<BtMac, u64> = Default::default();
        let mut t = 0;
        while t < horizon * 1_000 {
            let (mac, _) = schedule.at(t);
            if let Some(prev) = last.insert(mac, t) {
                prop_assert!(t - prev <= settings.max_interval_ms);
            }
            t += settings.slot_ms;
        }
    }

    #[test]
    fn concentrator_download_is_fresh_and_bounded(
        epochs in proptest::collection::vec(0u64..30, 1..60),
        now in 0u64..30,
        grace in 0u64..3,
    ) {
        let mut store = ConcentratorStore::new();
        for (i, &e) in epochs.iter().enumerate() {
            store.upload(BtMac(i as u64), EncounterCode { id_bytes: [i as u8; 16], epoch_index: e }, i as f64);
        }
        let fresh = store.download(now, grace, 10);
        prop_assert!(fresh.len() <= 10);
        let macs: BTreeSet<BtMac> = fresh.iter().map(|(m, _)| *m).collect();
        prop_assert_eq!(macs.len(), fresh.len());
        for (_, code) in fresh {
            prop_assert!(code.epoch_index <= now);
            prop_assert!(code.epoch_index + grace >= now);
        }
    }

    #[test]
    fn haversine_symmetric_bounded_nonnegative(
        lat1 in -89.0f64..89.0, lon1 in -179.0f64..179.0,
        lat2 in -89.0f64..89.0, lon2 in -179.0f64..179.0,
    ) {
        let d = haversine_km((lat1, lon1), (lat2, lon2));
        prop_assert!(d >= 0.0);
        prop_assert!(d <= std::f64::consts::PI * 6_371.0 + 1e-6);
        let back = haversine_km((lat2, lon2), (lat1, lon1));
        prop_assert!((d - back).abs() < 1e-9);
        prop_assert!(haversine_km((lat1, lon1), (lat1, lon1)) < 1e-9);
    }
}
