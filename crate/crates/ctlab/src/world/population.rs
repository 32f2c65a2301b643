//! Table-6-style population sampling and the sensor-side summarizer.
//!
//! Devices approach a sensor in a straight line at constant speed, dwell
//! near it, and leave the same way. Only the attacker sensors receive.
//! The summarizer computes, per visit, the exact BLE detection interval
//! and the received probes on the 100 ms tick grid, without materializing
//! every advertisement; [`super::engine::run_population_exact`] is the
//! event-level reference it is tested against.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::ConfigError;
use crate::protocol::{EpochClock, TemporaryKey};
use crate::rng::derive_rng;
use crate::world::{
    BtMac, DeviceState, EncounterVisit, GroundTruth, Pos, PopulationOutput, ProbeObs,
    SensorObservations, SightingInterval, Table6Params, Tag, Trajectory, TICK_S,
};

pub const SENSOR_GRID_SPACING: f64 = 200.0;
/// Devices spawn this far outside the WiFi detection radius.
pub const SPAWN_MARGIN: f64 = 10.0;

pub fn sensor_pos(params: &Table6Params, sensor: u32) -> Pos {
    let side = (params.sensors as f64).sqrt().ceil() as u32;
    let x = (sensor % side) as f64 * SENSOR_GRID_SPACING;
    let y = (sensor / side) as f64 * SENSOR_GRID_SPACING;
    (x, y)
}

/// BLE advertisement period in ticks for a messages-per-second rate.
pub fn period_ticks(bt_rate: f64) -> u64 {
    ((1.0 / bt_rate) / TICK_S).round().max(1.0) as u64
}

#[derive(Debug, Clone)]
pub struct VisitTiming {
    pub presence_start: f64,
    pub arrive: f64,
    pub leave: f64,
    pub presence_end: f64,
    pub spawn_distance: f64,
}

pub fn visit_timing(params: &Table6Params, speed: f64, visit: &EncounterVisit) -> VisitTiming {
    let spawn = params.r_wifi + SPAWN_MARGIN;
    let approach = (spawn - visit.stop_distance) / speed;
    let arrive = visit.start + approach;
    let leave = arrive + visit.dwell;
    VisitTiming {
        presence_start: visit.start,
        arrive,
        leave,
        presence_end: leave + approach,
        spawn_distance: spawn,
    }
}

/// Distance to the visited sensor at time `t`, or None when absent.
pub fn visit_distance(timing: &VisitTiming, speed: f64, stop_distance: f64, t: f64) -> Option<f64> {
    if t < timing.presence_start || t > timing.presence_end {
        return None;
    }
    Some(if t < timing.arrive {
        timing.spawn_distance - speed * (t - timing.presence_start)
    } else if t <= timing.leave {
        stop_distance
    } else {
        stop_distance + speed * (t - timing.leave)
    })
}

/// Time interval during which the visit is within `radius` of its sensor.
pub fn in_range_interval(
    timing: &VisitTiming,
    speed: f64,
    stop_distance: f64,
    radius: f64,
) -> Option<(f64, f64)> {
    if radius < stop_distance {
        return None;
    }
    let r = radius.min(timing.spawn_distance);
    let enter = timing.presence_start + (timing.spawn_distance - r) / speed;
    let exit = timing.leave + (r - stop_distance) / speed;
    Some((enter, exit))
}

fn sample_range(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

/// Draws one device's parameters, visits, and probe schedule.
///
/// Overrides let detection-rate sweeps pin a parameter for infected
/// devices while everyone else stays on the Table-6 distributions.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeviceOverrides {
    pub encounter_count: Option<u32>,
    pub wifi_probing_frequency: Option<f64>,
    pub speed: Option<f64>,
}

fn sample_device(
    params: &Table6Params,
    seed: u64,
    id: u32,
    overrides: &DeviceOverrides,
) -> (DeviceState, Vec<u64>) {
    let mut rng = derive_rng(seed, "device", id as u64);
    let mut secret = [0u8; 16];
    rng.fill(&mut secret);
    // One key per day, plus a spare in case a visit spills past midnight.
    let keys: Vec<TemporaryKey> =
        (0..=params.days as u64).map(|d| TemporaryKey::generate(&mut rng, d)).collect();

    let speed = overrides.speed.unwrap_or_else(|| sample_range(&mut rng, params.speed));
    let bt_rate = sample_range(&mut rng, params.bluetooth_frequency);
    let wifi_rate = overrides
        .wifi_probing_frequency
        .unwrap_or_else(|| sample_range(&mut rng, params.wifi_probing_frequency));
    let n_visits = overrides.encounter_count.unwrap_or_else(|| {
        rng.gen_range(params.encounter_count.0..=params.encounter_count.1)
    });
    let _phase_seed: u64 = rng.gen();
    let phase = _phase_seed % period_ticks(bt_rate);

    let mut visits: Vec<EncounterVisit> = Vec::with_capacity(n_visits as usize);
    let mut occupied: Vec<(f64, f64)> = Vec::new();
    for _ in 0..n_visits {
        // Redraw until the visit does not overlap this device's others.
        for _attempt in 0..100 {
            let sensor = rng.gen_range(0..params.sensors);
            let day = rng.gen_range(0..params.days) as f64;
            let stop_distance = rng.gen_range(0.5..2.5_f64.min(params.r_bt - 0.5));
            let dwell = sample_range(&mut rng, params.duration);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let presence_len =
                2.0 * (params.r_wifi + SPAWN_MARGIN - stop_distance) / speed + dwell;
            let window_start = day * 86_400.0 + params.window_start as f64;
            let span = (params.window_len as f64 - presence_len).max(0.0);
            let raw_start = window_start + rng.gen_range(0.0..=span);
            // Align presence starts to the tick grid.
            let start = (raw_start / TICK_S).round() * TICK_S;
            let end = start + presence_len;
            if occupied.iter().all(|&(s, e)| end < s || start > e) {
                occupied.push((start, end));
                visits.push(EncounterVisit { sensor, start, dwell, stop_distance, approach_angle: angle });
                break;
            }
        }
    }
    visits.sort_by(|a, b| a.start.partial_cmp(&b.start).unwrap());

    // WiFi probes: exponential gaps over each presence interval, snapped to
    // the tick grid.
    let mut probe_ticks: Vec<u64> = Vec::new();
    if wifi_rate > 0.0 {
        let lambda = wifi_rate / 3_600.0;
        for visit in &visits {
            let timing = visit_timing(params, speed, visit);
            let mut t = timing.presence_start;
            loop {
                let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                t += -u.ln() / lambda;
                if t > timing.presence_end {
                    break;
                }
                probe_ticks.push((t / TICK_S).round() as u64);
            }
        }
    }

    let device = DeviceState {
        device_id: id,
        pos: (0.0, 0.0),
        speed,
        trajectory: Trajectory::fixed((0.0, 0.0)),
        visits,
        bt_rate: (10.0 / period_ticks(bt_rate) as f64), // effective rate on the tick grid
        wifi_rate,
        tags: Vec::new(),
        infected: false,
        keys,
        secret,
    };
    let _ = phase; // phase re-derived deterministically in emission scheduling
    (device, probe_ticks)
}

/// Deterministic BLE phase for a device (tick offset within its period).
pub fn bt_phase(device: &DeviceState) -> u64 {
    // Derived from the secret so both simulation paths agree without
    // threading extra state around.
    let p = period_ticks(device.bt_rate);
    (u64::from_le_bytes(device.secret[..8].try_into().unwrap())) % p
}

/// Samples the full Table-6 population: devices, infection flags, and the
/// tag universe (`num_tags` distinct tags, `num_infected_tags` of which
/// belong to infected devices; infected devices without a tag model users
/// with WiFi off).
pub fn sample_population(
    params: &Table6Params,
    seed: u64,
) -> Result<(Vec<DeviceState>, Vec<Vec<u64>>), ConfigError> {
    sample_population_with(params, seed, &DeviceOverrides::default())
}

pub fn sample_population_with(
    params: &Table6Params,
    seed: u64,
    infected_overrides: &DeviceOverrides,
) -> Result<(Vec<DeviceState>, Vec<Vec<u64>>), ConfigError> {
    params.validate()?;
    let mut pop_rng = derive_rng(seed, "population", 0);
    let infected_count = params.infected_count() as usize;
    let population = params.population as usize;

    let infected_ids =
        rand::seq::index::sample(&mut pop_rng, population, infected_count).into_vec();
    let infected_set: std::collections::HashSet<usize> = infected_ids.iter().copied().collect();
    // Infected devices that keep WiFi off (no tag at all).
    let wifi_off: std::collections::HashSet<usize> = infected_ids
        [..infected_count - params.num_infected_tags as usize]
        .iter()
        .copied()
        .collect();

    let mut devices = Vec::with_capacity(population);
    let mut probes = Vec::with_capacity(population);
    for id in 0..params.population {
        let overrides = if infected_set.contains(&(id as usize)) {
            infected_overrides
        } else {
            &DeviceOverrides::default()
        };
        let (mut d, p) = sample_device(params, seed, id, overrides);
        d.infected = infected_set.contains(&(id as usize));
        devices.push(d);
        probes.push(p);
    }

    // Tag universe: one home tag per WiFi-on device, remaining tags spread
    // as secondary (never probed) SSIDs over normal devices.
    let mut tag_idx = 0u32;
    fn next_tag(rng: &mut ChaCha8Rng, tag_idx: &mut u32) -> Tag {
        let t = Tag {
            wifi_mac: rng.gen::<u64>() & 0xFFFF_FFFF_FFFF,
            ssid: format!("ssid-{:05}", *tag_idx),
        };
        *tag_idx += 1;
        t
    }
    for id in 0..population {
        if !wifi_off.contains(&id) {
            let t = next_tag(&mut pop_rng, &mut tag_idx);
            devices[id].tags.push(t);
        }
    }
    let normal_ids: Vec<usize> = (0..population).filter(|i| !infected_set.contains(i)).collect();
    while tag_idx < params.num_tags {
        if normal_ids.is_empty() {
            break;
        }
        let t = next_tag(&mut pop_rng, &mut tag_idx);
        let pick = normal_ids[pop_rng.gen_range(0..normal_ids.len())];
        devices[pick].tags.push(t);
    }

    Ok((devices, probes))
}

fn ground_truth(params: &Table6Params, devices: &[DeviceState], clock: &EpochClock) -> GroundTruth {
    let mut gt = GroundTruth { sensor_base: params.population, ..Default::default() };
    for d in devices {
        if d.infected {
            gt.infected.insert(d.device_id);
        }
        gt.device_tags.insert(d.device_id, d.tags.clone());
        gt.device_keys.insert(d.device_id, d.keys.clone());
        for visit in &d.visits {
            let timing = visit_timing(params, d.speed, visit);
            let first = clock.epoch_of(timing.presence_start);
            let last = clock.epoch_of(timing.presence_end);
            for epoch in first..=last {
                gt.mac_owner.insert(BtMac::derive(&d.secret, epoch), d.device_id);
                if let Some(key) = d.key_for_day(clock.day_of_epoch(epoch)) {
                    if let Ok(code) = crate::protocol::derive_identifier(key, epoch, clock) {
                        gt.code_owner.insert(code, d.device_id);
                    }
                }
            }
        }
    }
    gt
}

/// Runs a population scenario through the analytic summarizer.
pub fn run_population(
    params: &Table6Params,
    seed: u64,
    clock: &EpochClock,
) -> Result<PopulationOutput, ConfigError> {
    run_population_with(params, seed, clock, &DeviceOverrides::default())
}

pub fn run_population_with(
    params: &Table6Params,
    seed: u64,
    clock: &EpochClock,
    infected_overrides: &DeviceOverrides,
) -> Result<PopulationOutput, ConfigError> {
    let (devices, probes) = sample_population_with(params, seed, infected_overrides)?;
    let observations = summarize(params, &devices, &probes, clock);
    let ground_truth = ground_truth(params, &devices, clock);
    Ok(PopulationOutput { observations, ground_truth, devices })
}

/// Computes sensor observations analytically on the tick grid.
pub fn summarize(
    params: &Table6Params,
    devices: &[DeviceState],
    probe_ticks: &[Vec<u64>],
    clock: &EpochClock,
) -> SensorObservations {
    let mut obs = SensorObservations::default();
    let epoch_ticks = (clock.epoch_len() as f64 / TICK_S).round() as u64;
    for d in devices {
        let period = period_ticks(d.bt_rate);
        let phase = bt_phase(d);
        for visit in &d.visits {
            let timing = visit_timing(params, d.speed, visit);
            let bt = in_range_interval(&timing, d.speed, visit.stop_distance, params.r_bt);
            if let Some((enter, exit)) = bt {
                let a_tick = (enter / TICK_S - 1e-9).ceil() as u64;
                let b_tick = (exit / TICK_S + 1e-9).floor() as u64;
                // First emission tick >= a_tick congruent to phase mod period.
                let mut k = a_tick + (phase + period - a_tick % period) % period;
                while k <= b_tick {
                    // Detections within the current epoch.
                    let epoch = k / epoch_ticks;
                    let epoch_end_tick = ((epoch + 1) * epoch_ticks - 1).min(b_tick);
                    let count = (epoch_end_tick - k) / period;
                    let last = k + count * period;
                    obs.sightings.push(SightingInterval {
                        sensor: params.population + visit.sensor,
                        mac: BtMac::derive(&d.secret, epoch),
                        first_det: k as f64 * TICK_S,
                        last_det: last as f64 * TICK_S,
                        period_ticks: period,
                        emitter: d.device_id,
                    });
                    k = last + period;
                }
            }
        }
        // Probes: received while within r_wifi of the visited sensor.
        if let Some(tag) = d.home_tag() {
            for &pt in &probe_ticks[d.device_id as usize] {
                let t = pt as f64 * TICK_S;
                for visit in &d.visits {
                    let timing = visit_timing(params, d.speed, visit);
                    if let Some(dist) = visit_distance(&timing, d.speed, visit.stop_distance, t) {
                        if dist <= params.r_wifi {
                            obs.probes.push(ProbeObs {
                                sensor: params.population + visit.sensor,
                                time: t,
                                tag: tag.clone(),
                                emitter: d.device_id,
                            });
                        }
                        break;
                    }
                }
            }
        }
    }
    obs.sightings.sort_by(|a, b| {
        (a.sensor, a.emitter)
            .cmp(&(b.sensor, b.emitter))
            .then(a.first_det.partial_cmp(&b.first_det).unwrap())
    });
    obs.probes.sort_by(|a, b| {
        (a.sensor, a.emitter).cmp(&(b.sensor, b.emitter)).then(a.time.partial_cmp(&b.time).unwrap())
    });
    obs
}
