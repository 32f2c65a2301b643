//! End-to-end acceptance checks. Each test guards one headline claim and
//! prints a PASS line when it holds (run with `--nocapture` to see them).

use std::collections::BTreeSet;

use ctlab::deanon;
use ctlab::isolation::{self, DeviceSession, IsolationParams};
use ctlab::poi::{self, PoiRecord};
use ctlab::pollution::{self, plan_broadcast};
use ctlab::protocol::{derive_identifier, EpochClock, TemporaryKey};
use ctlab::server::ExposureServer;
use ctlab::world::engine::run_scenario;
use ctlab::world::population::run_population;
use ctlab::world::{BtMac, PollutionSettings, ScenarioConfig, Table6Params};

fn config_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn load(name: &str) -> ScenarioConfig {
    ctlab::cli::ScenarioFile::load(&config_path(name)).unwrap().into_config().unwrap()
}

#[test]
fn acceptance_1_isolation_pins_the_diagnosed_contact() {
    let cfg = load("table5.toml");
    let results = ctlab::cli::isolate_scenario(&cfg, 1, 3).unwrap();
    assert_eq!(results["contacts"], 3);
    assert_eq!(results["rounds_used"], 1);
    assert_eq!(results["accounts_used"], 3);
    assert_eq!(results["identified_devices"], serde_json::json!([2]));
    assert_eq!(results["complete"], true);
    println!("PASS: three-contact isolation identifies the diagnosed contact in 1 round / 3 accounts");
}

fn synthetic_sessions(
    n_contacts: usize,
    infected: usize,
    clock: &EpochClock,
) -> (ExposureServer, Vec<DeviceSession>) {
    let mut server = ExposureServer::new(*clock);
    server.register_covidcode("cc");
    let mut sessions = Vec::with_capacity(n_contacts);
    for i in 0..n_contacts {
        let mut bytes = [0u8; 16];
        bytes[..8].copy_from_slice(&(i as u64 + 1).to_le_bytes());
        let key = TemporaryKey::from_bytes(bytes, 0);
        let codes = vec![derive_identifier(&key, 0, clock).unwrap()];
        sessions.push(DeviceSession { mac: BtMac(i as u64), codes });
        if i == infected {
            server.report_positive("cc", &[key], 0).unwrap();
        }
    }
    (server, sessions)
}

#[test]
fn acceptance_2_pool_testing_round_bound_holds_over_100_seeds() {
    // One diagnosed contact among N: at most ceil(log_n N) rounds.
    let clock = EpochClock::default();
    let cases = [(100usize, 10usize, 2usize), (1_000, 10, 3), (81, 3, 4)];
    for seed in 0..100u64 {
        for &(n_contacts, pools, bound) in &cases {
            // Spread the infected index over the seed range.
            let infected = (seed as usize * 7 + seed as usize) % n_contacts;
            let (mut server, sessions) = synthetic_sessions(n_contacts, infected, &clock);
            let params = IsolationParams { pools, max_rounds: 64 };
            let r = isolation::run_isolation(&mut server, &sessions, &params).unwrap();
            assert_eq!(r.identified, vec![infected], "seed {seed}");
            assert!(
                r.rounds_used <= bound,
                "seed {seed}: {n_contacts} contacts / {pools} pools took {} rounds (> {bound})",
                r.rounds_used
            );
        }
    }
    println!("PASS: isolation finishes within ceil(log_n N) rounds on 100/100 seeds");
}

#[test]
fn acceptance_3_relay_creates_exactly_one_false_notification() {
    let cfg = load("fig4_pair.toml");
    let report = pollution::run_pollution(&cfg, 0).unwrap();
    assert_eq!(report.false_notifications, 1);
    assert_eq!(report.genuine_notifications, 0);
    assert_eq!(report.falsely_notified, [2u32].into_iter().collect::<BTreeSet<_>>());

    // The four-device variant doubles the damage.
    let cfg = load("fig4.toml");
    let report = pollution::run_pollution(&cfg, 0).unwrap();
    assert_eq!(report.false_notifications, 2);
    println!("PASS: relay scenario notifies exactly the out-of-range victims, never genuinely exposed ones");
}

#[test]
fn acceptance_4_broadcast_capacity_is_ten_codes() {
    let settings = PollutionSettings::default();
    assert_eq!(settings.capacity(), 10);
    let pairs: Vec<(BtMac, ctlab::protocol::EncounterCode)> = (0..11)
        .map(|i| {
            (BtMac(i), ctlab::protocol::EncounterCode { id_bytes: [i as u8; 16], epoch_index: 0 })
        })
        .collect();
    let ok = plan_broadcast(&pairs[..10], &settings).unwrap();
    assert!(ok.max_gap_ms() <= settings.max_interval_ms);
    assert!(matches!(
        plan_broadcast(&pairs, &settings),
        Err(ctlab::error::AttackError::CapacityExceeded { requested: 11, max: 10 })
    ));
    println!("PASS: 400 ms slots under a 4 s scan interval carry 10 codes and reject an 11th");
}

#[test]
fn acceptance_5_deanonymization_detection_rate_in_band() {
    let params = Table6Params::default();
    let clock = EpochClock::default();
    let window =
        deanon::admission_window(params.r_wifi, params.r_bt, params.mean_speed()).unwrap();
    let seeds = 10u64;
    let mut total = 0.0;
    for seed in 0..seeds {
        let out = run_population(&params, seed, &clock).unwrap();
        total += deanon::score_population(&out, window).detection_rate;
    }
    let mean = total / seeds as f64;
    assert!(
        (0.83..=0.97).contains(&mean),
        "mean detection rate {mean:.3} outside [0.83, 0.97]"
    );
    println!("PASS: mean tag detection rate over {seeds} full-scale seeds is {mean:.3}, inside [0.83, 0.97]");
}

/// Straight-line re-implementation of the coverage estimator used as an
/// oracle: O(n^2), no spatial index, same discount/removal rules.
fn coverage_oracle(records: &[&PoiRecord], population: f64, p: f64, radius_km: f64) -> f64 {
    let n = records.len();
    let mut adjusted: Vec<f64> = records.iter().map(|r| r.raw_count).collect();
    let mut active = vec![true; n];
    for i in 0..n {
        if !active[i] {
            continue;
        }
        for j in 0..n {
            if i == j || !active[j] {
                continue;
            }
            let d = poi::haversine_km(
                (records[i].lat, records[i].lon),
                (records[j].lat, records[j].lon),
            );
            if d <= radius_km {
                adjusted[i] -= p / 2.0 * records[i].raw_count.min(records[j].raw_count);
            }
        }
        if adjusted[i] <= 0.0 {
            active[i] = false;
        }
    }
    (0..n).filter(|&i| active[i]).map(|i| adjusted[i].max(0.0)).sum::<f64>() / population
}

#[test]
fn acceptance_6_poi_coverage_stack_checks_out() {
    // Haversine against reference city distances (0.5%).
    let pairs = [
        ((48.8566, 2.3522), (51.5074, -0.1278), 343.5),   // Paris-London
        ((34.0522, -118.2437), (40.7128, -74.0060), 3_935.7), // LA-NYC
        ((29.7604, -95.3698), (41.8781, -87.6298), 1_514.0),  // Houston-Chicago
    ];
    for (a, b, want) in pairs {
        let d = poi::haversine_km(a, b);
        assert!((d - want).abs() / want < 0.005, "{a:?}-{b:?}: {d}");
    }

    // Estimator against the brute-force oracle on irregular data.
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
    let records: Vec<PoiRecord> = (0..200)
        .map(|i| PoiRecord {
            sensor: format!("s{i}"),
            city: "oracle".into(),
            lat: 29.0 + rng.gen_range(0.0..0.5),
            lon: -95.5 + rng.gen_range(0.0..0.5),
            raw_count: rng.gen_range(1.0..200.0_f64).round(),
            visits_by_day: vec![1.0],
        })
        .collect();
    let refs: Vec<&PoiRecord> = records.iter().collect();
    for (p, r) in [(0.1, 2.0), (0.3, 5.0), (0.9, 10.0)] {
        let got = poi::estimate_coverage(&refs, 50_000.0, p, r).unwrap();
        let want = coverage_oracle(&refs, 50_000.0, p, r);
        assert!((got - want).abs() < 1e-9, "p={p} r={r}: {got} vs {want}");
    }

    // Monotonicity in p and radius on the big fixture, plus the headline number.
    let (records, population) = poi::synthetic_city_fixture();
    let refs: Vec<&PoiRecord> = records.iter().collect();
    let mut prev = f64::INFINITY;
    for p in [0.0, 0.2, 0.4, 0.8] {
        let c = poi::estimate_coverage(&refs, population, p, 5.0).unwrap();
        assert!(c <= prev + 1e-12);
        prev = c;
    }
    let mut prev = f64::INFINITY;
    for r in [0.05, 1.0, 5.0, 7.0] {
        let c = poi::estimate_coverage(&refs, population, 0.3, r).unwrap();
        assert!(c <= prev + 1e-12);
        prev = c;
    }
    let c = poi::estimate_coverage(&refs, population, 0.3, 5.0).unwrap();
    assert!((c - 0.25).abs() < 0.03, "fixture coverage {c}");
    println!("PASS: haversine within 0.5%, estimator matches the oracle, coverage is monotone and hits 0.25 +/- 0.03");
}

#[test]
fn acceptance_7_runs_are_byte_deterministic() {
    // Placed event logs.
    let cfg = load("fig4.toml");
    let mut logs = Vec::new();
    for _ in 0..2 {
        let sim = run_scenario(&cfg, 9).unwrap();
        let mut buf = Vec::new();
        sim.events.to_csv(&mut buf).unwrap();
        logs.push(buf);
    }
    assert_eq!(logs[0], logs[1]);
    assert!(!logs[0].is_empty());

    // Population observations and scores.
    let params = Table6Params {
        population: 500,
        infection_rate: 0.02,
        num_tags: 550,
        num_infected_tags: 8,
        sensors: 2_000,
        ..Table6Params::default()
    };
    let clock = EpochClock::default();
    let a = run_population(&params, 4, &clock).unwrap();
    let b = run_population(&params, 4, &clock).unwrap();
    assert_eq!(a.observations, b.observations);
    let window =
        deanon::admission_window(params.r_wifi, params.r_bt, params.mean_speed()).unwrap();
    assert_eq!(deanon::score_population(&a, window), deanon::score_population(&b, window));

    // Report bytes.
    let report_a = ctlab::report::RunReport::new(
        "pollute",
        9,
        ctlab::report::scenario_hash(&params),
        serde_json::json!({"x": 1}),
    );
    let report_b = ctlab::report::RunReport::new(
        "pollute",
        9,
        ctlab::report::scenario_hash(&params),
        serde_json::json!({"x": 1}),
    );
    assert_eq!(report_a.to_bytes(), report_b.to_bytes());
    println!("PASS: same seed, same config gives byte-identical logs, observations, and reports");
}

#[test]
fn acceptance_8_protocol_rotation_collision_and_matching() {
    let clock = EpochClock::default();
    // Golden derivation vector.
    let zero = TemporaryKey::from_bytes([0u8; 16], 0);
    assert_eq!(
        derive_identifier(&zero, 0, &clock).unwrap().hex(),
        "499f785446f9bf2f8ca08173a40a5d1d"
    );

    // Rotation and collision-freedom over 10^4+ epochs.
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let per_day = clock.epochs_per_day();
    let mut seen = std::collections::HashSet::new();
    let mut prev: Option<[u8; 16]> = None;
    for day in 0..(10_000 / per_day + 1) {
        let key = TemporaryKey::generate(&mut rng, day);
        for epoch in day * per_day..(day + 1) * per_day {
            let code = derive_identifier(&key, epoch, &clock).unwrap();
            if let Some(p) = prev {
                assert_ne!(p, code.id_bytes, "no rotation at epoch {epoch}");
            }
            assert!(seen.insert(code.id_bytes), "collision at epoch {epoch}");
            prev = Some(code.id_bytes);
        }
    }
    assert!(seen.len() as u64 > 10_000);

    // Matching: exactly the diagnosed-and-in-threshold records match.
    let mut db = ctlab::protocol::KeyDatabase::new();
    let sick = TemporaryKey::from_bytes([1u8; 16], 0);
    let healthy = TemporaryKey::from_bytes([2u8; 16], 0);
    db.insert(sick);
    let params = ctlab::protocol::ExposureParams::default();
    let rec = |key: &TemporaryKey, dist: f64, dwell: f64| ctlab::protocol::EncounterRecord {
        code: derive_identifier(key, 3, &clock).unwrap(),
        time: 0.0,
        distance: dist,
        dwell,
        receiver: 0,
    };
    let records = vec![
        rec(&sick, 2.0, 10.0),    // matches
        rec(&healthy, 2.0, 10.0), // not diagnosed
        rec(&sick, 9.0, 10.0),    // too far
        rec(&sick, 2.0, 0.1),     // too brief
    ];
    let matched = ctlab::protocol::match_exposures(&records, &db, &params, &clock);
    assert_eq!(matched.len(), 1);
    assert!(matched.contains(&records[0].code));
    println!("PASS: identifiers rotate collision-free and matching honors diagnosis, distance, and dwell");
}
