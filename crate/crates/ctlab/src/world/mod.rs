//! Seeded simulation of devices moving in 2-D space, broadcasting BLE
//! advertisements and WiFi probe requests, and receiving within radio range.
//!
//! Two scenario kinds share one configuration surface:
//! - placed scenarios: a handful of explicitly positioned devices, run on a
//!   100 ms tick engine with full mutual reception ([`engine`]);
//! - population scenarios: a Table-6-style crowd visiting attacker sensors,
//!   where only the sensors receive ([`population`]).

pub mod engine;
pub mod population;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;
use crate::protocol::{EncounterCode, EncounterRecord, EpochClock, ExposureParams, TemporaryKey};

pub const TICK_S: f64 = 0.1;

pub type Pos = (f64, f64);

pub fn dist(a: Pos, b: Pos) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// 48-bit Bluetooth MAC, ephemeral: rotates with the identifier epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BtMac(pub u64);

impl BtMac {
    pub fn derive(device_secret: &[u8; 16], epoch: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"btmac");
        h.update(device_secret);
        h.update(epoch.to_le_bytes());
        let d = h.finalize();
        let mut b = [0u8; 8];
        b[..6].copy_from_slice(&d[..6]);
        BtMac(u64::from_le_bytes(b))
    }

    pub fn hex(&self) -> String {
        hex::encode(&self.0.to_le_bytes()[..6])
    }
}

impl fmt::Display for BtMac {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.hex())
    }
}

/// Persistent (WiFi MAC, SSID) pair leaked by probe requests. The MAC is
/// stable per (device, SSID) for the scenario duration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tag {
    pub wifi_mac: u64,
    pub ssid: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RadioKind {
    BtAdvert,
    WifiProbe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    BtAdvert { mac: BtMac, code: EncounterCode },
    WifiProbe { tag: Tag },
}

impl Payload {
    pub fn kind(&self) -> RadioKind {
        match self {
            Payload::BtAdvert { .. } => RadioKind::BtAdvert,
            Payload::WifiProbe { .. } => RadioKind::WifiProbe,
        }
    }

    pub fn hex(&self) -> String {
        match self {
            Payload::BtAdvert { mac, code } => format!("{}{}", mac.hex(), code.hex()),
            Payload::WifiProbe { tag } => {
                let mut bytes = tag.wifi_mac.to_le_bytes()[..6].to_vec();
                bytes.extend_from_slice(tag.ssid.as_bytes());
                hex::encode(bytes)
            }
        }
    }
}

/// One delivered emission. Delivery requires the receiver to be within
/// `r_bt` (BtAdvert) or `r_wifi` (WifiProbe) of the emission position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioEvent {
    pub time: f64,
    pub emitter: u32,
    pub receiver: u32,
    pub pos: Pos,
    pub payload: Payload,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub events: Vec<RadioEvent>,
}

impl EventLog {
    pub fn to_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["time", "kind", "emitter", "receiver", "payload_hex"])?;
        for e in &self.events {
            let kind = match e.payload.kind() {
                RadioKind::BtAdvert => "bt_advert",
                RadioKind::WifiProbe => "wifi_probe",
            };
            wtr.write_record([
                format!("{:.1}", e.time),
                kind.to_string(),
                e.emitter.to_string(),
                e.receiver.to_string(),
                e.payload.hex(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Piecewise-linear waypoint trajectory; clamped outside the first/last
/// waypoint times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<(f64, Pos)>,
}

impl Trajectory {
    pub fn fixed(pos: Pos) -> Self {
        Self { waypoints: vec![(0.0, pos)] }
    }

    pub fn pos_at(&self, t: f64) -> Pos {
        let wps = &self.waypoints;
        if t <= wps[0].0 {
            return wps[0].1;
        }
        for pair in wps.windows(2) {
            let (t0, p0) = pair[0];
            let (t1, p1) = pair[1];
            if t < t1 {
                let f = (t - t0) / (t1 - t0);
                return (p0.0 + f * (p1.0 - p0.0), p0.1 + f * (p1.1 - p0.1));
            }
        }
        wps.last().unwrap().1
    }
}

/// One approach/dwell/exit pass by a sensor in a population scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterVisit {
    pub sensor: u32,
    pub start: f64,
    pub dwell: f64,
    pub stop_distance: f64,
    pub approach_angle: f64,
}

/// A simulated phone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceState {
    pub device_id: u32,
    pub pos: Pos,
    pub speed: f64,
    pub trajectory: Trajectory,
    pub visits: Vec<EncounterVisit>,
    pub bt_rate: f64,
    pub wifi_rate: f64,
    /// Recently-connected SSIDs; the first entry is the home tag actually
    /// probed. Empty means WiFi is off.
    pub tags: Vec<Tag>,
    pub infected: bool,
    pub keys: Vec<TemporaryKey>,
    pub secret: [u8; 16],
}

impl DeviceState {
    pub fn key_for_day(&self, day: u64) -> Option<&TemporaryKey> {
        self.keys.iter().find(|k| k.day_index == day)
    }

    pub fn home_tag(&self) -> Option<&Tag> {
        self.tags.first()
    }
}

/// Explicitly positioned device for small placed scenarios.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlacedDevice {
    pub id: u32,
    pub pos: Pos,
    #[serde(default)]
    pub waypoints: Vec<(f64, f64, f64)>,
    #[serde(default)]
    pub attacker: bool,
    #[serde(default)]
    pub polluter: bool,
    #[serde(default = "default_bt_rate")]
    pub bt_rate: f64,
    #[serde(default)]
    pub wifi_rate: f64,
    #[serde(default)]
    pub ssid: Option<String>,
    #[serde(default)]
    pub infected: bool,
    #[serde(default)]
    pub diagnosed: bool,
}

fn default_bt_rate() -> f64 {
    5.0
}

/// Table-6-style population parameters. Ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Table6Params {
    pub population: u32,
    pub infection_rate: f64,
    /// Number of observation days; one window per day.
    pub days: u32,
    /// Window start, seconds into the day (16:00 = 57600).
    pub window_start: u64,
    /// Window length in seconds (2 h = 7200).
    pub window_len: u64,
    /// Dwell time in sensor range, seconds.
    pub duration: (f64, f64),
    pub encounter_count: (u32, u32),
    pub num_tags: u32,
    pub num_infected_tags: u32,
    /// WiFi probing rate, probes per hour.
    pub wifi_probing_frequency: (f64, f64),
    /// Bluetooth advertisement rate, messages per second.
    pub bluetooth_frequency: (f64, f64),
    /// Mobility, m/s.
    pub speed: (f64, f64),
    pub r_wifi: f64,
    pub r_bt: f64,
    /// Number of attacker monitoring points the arrivals spread over.
    pub sensors: u32,
}

impl Default for Table6Params {
    fn default() -> Self {
        Self {
            population: 10_000,
            infection_rate: 0.01,
            days: 2,
            window_start: 57_600,
            window_len: 7_200,
            duration: (30.0, 300.0),
            encounter_count: (1, 5),
            num_tags: 12_000,
            num_infected_tags: 80,
            wifi_probing_frequency: (15.0, 75.0),
            bluetooth_frequency: (3.0, 10.0),
            speed: (1.0, 15.0),
            r_wifi: 50.0,
            r_bt: 10.0,
            sensors: 40_000,
        }
    }
}

impl Table6Params {
    pub fn infected_count(&self) -> u32 {
        (self.population as f64 * self.infection_rate).round() as u32
    }

    pub fn mean_speed(&self) -> f64 {
        (self.speed.0 + self.speed.1) / 2.0
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.infection_rate) {
            return Err(ConfigError::invalid("infection_rate", "must be in [0, 1]"));
        }
        let infected = self.infected_count();
        if infected > self.population {
            return Err(ConfigError::invalid("infection_rate", "infected count exceeds population"));
        }
        if self.num_infected_tags > infected {
            return Err(ConfigError::invalid(
                "num_infected_tags",
                "cannot exceed the infected device count",
            ));
        }
        let tagged = self.population - (infected - self.num_infected_tags);
        if self.num_tags < tagged {
            return Err(ConfigError::invalid(
                "num_tags",
                format!("needs at least {tagged} tags so every WiFi-on device owns one"),
            ));
        }
        for (name, (lo, hi)) in [
            ("duration", self.duration),
            ("wifi_probing_frequency", self.wifi_probing_frequency),
            ("bluetooth_frequency", self.bluetooth_frequency),
            ("speed", self.speed),
        ] {
            if lo <= 0.0 || hi < lo {
                return Err(ConfigError::invalid(name, "range must be positive and ordered"));
            }
        }
        if self.encounter_count.0 == 0 || self.encounter_count.1 < self.encounter_count.0 {
            return Err(ConfigError::invalid("encounter_count", "range must be >= 1 and ordered"));
        }
        if self.r_wifi < self.r_bt || self.r_bt <= 0.0 {
            return Err(ConfigError::invalid("r_wifi", "need r_wifi >= r_bt > 0"));
        }
        if self.sensors == 0 {
            return Err(ConfigError::invalid("sensors", "must be positive"));
        }
        if self.days == 0 || self.window_len == 0 {
            return Err(ConfigError::invalid("days", "observation time must be positive"));
        }
        Ok(())
    }
}

/// Pollution replay settings (slot budget per Bluetooth spec timing).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PollutionSettings {
    pub slot_ms: u64,
    pub max_interval_ms: u64,
    /// Replayed codes expire after their epoch plus this many grace epochs.
    pub grace_epochs: u64,
}

impl Default for PollutionSettings {
    fn default() -> Self {
        Self { slot_ms: 400, max_interval_ms: 4_000, grace_epochs: 1 }
    }
}

impl PollutionSettings {
    pub fn capacity(&self) -> usize {
        (self.max_interval_ms / self.slot_ms) as usize
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ScenarioKind {
    Placed(Vec<PlacedDevice>),
    Population(Table6Params),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub clock: EpochClock,
    pub exposure: ExposureParams,
    /// Delivery radii for placed scenarios (population radii live in Table6Params).
    pub r_bt: f64,
    pub r_wifi: f64,
    /// Placed-scenario run length, seconds.
    pub duration: f64,
    /// Scenario start offset, seconds since day-0 midnight.
    pub start_time: f64,
    pub pollution: Option<PollutionSettings>,
}

impl ScenarioConfig {
    pub fn placed(devices: Vec<PlacedDevice>, duration: f64) -> Self {
        Self {
            kind: ScenarioKind::Placed(devices),
            clock: EpochClock::default(),
            exposure: ExposureParams::default(),
            r_bt: 5.0,
            r_wifi: 50.0,
            duration,
            start_time: 0.0,
            pollution: None,
        }
    }

    pub fn population(params: Table6Params) -> Self {
        Self {
            kind: ScenarioKind::Population(params),
            clock: EpochClock::default(),
            exposure: ExposureParams::default(),
            r_bt: 10.0,
            r_wifi: 50.0,
            duration: 0.0,
            start_time: 0.0,
            pollution: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.exposure
            .validate()
            .map_err(|e| ConfigError::invalid("exposure", e.to_string()))?;
        match &self.kind {
            ScenarioKind::Placed(devices) => {
                if self.duration <= 0.0 {
                    return Err(ConfigError::invalid("duration", "must be positive"));
                }
                if self.r_bt <= 0.0 || self.r_wifi < self.r_bt {
                    return Err(ConfigError::invalid("r_bt", "need r_wifi >= r_bt > 0"));
                }
                let mut ids = BTreeSet::new();
                for d in devices {
                    if !ids.insert(d.id) {
                        return Err(ConfigError::invalid("device.id", format!("duplicate id {}", d.id)));
                    }
                    if d.bt_rate <= 0.0 || d.bt_rate > 10.0 {
                        return Err(ConfigError::invalid("device.bt_rate", "must be in (0, 10]"));
                    }
                }
                Ok(())
            }
            ScenarioKind::Population(p) => p.validate(),
        }
    }
}

/// Ground truth retained for scoring only; attacks never read it.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    pub code_owner: HashMap<EncounterCode, u32>,
    pub mac_owner: HashMap<BtMac, u32>,
    pub infected: BTreeSet<u32>,
    pub diagnosed: BTreeSet<u32>,
    pub device_tags: BTreeMap<u32, Vec<Tag>>,
    pub device_keys: BTreeMap<u32, Vec<TemporaryKey>>,
    /// First id in the sensor id space (population scenarios).
    pub sensor_base: u32,
}

impl GroundTruth {
    pub fn infected_macs(&self) -> BTreeSet<BtMac> {
        self.mac_owner
            .iter()
            .filter(|(_, owner)| self.infected.contains(owner))
            .map(|(mac, _)| *mac)
            .collect()
    }
}

/// Provenance of one (receiver, code) inbox entry, split by whether the
/// delivery came from the code's true owner or from a replaying device.
#[derive(Debug, Clone, Default)]
pub struct Provenance {
    pub genuine: Option<EncounterRecord>,
    pub replayed: Option<EncounterRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct SimOutput {
    pub events: EventLog,
    /// Per-receiver encounter records, merged over provenance.
    pub inboxes: BTreeMap<u32, Vec<EncounterRecord>>,
    pub provenance: HashMap<(u32, EncounterCode), Provenance>,
    /// Per-receiver (mac, code) observations, for session grouping.
    pub observed_codes: BTreeMap<u32, BTreeSet<(BtMac, EncounterCode)>>,
    pub ground_truth: GroundTruth,
}

/// Sensor-side observations of a population run, compressed: one detection
/// interval per (sensor, rotating MAC, visit), plus every received probe.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SensorObservations {
    pub sightings: Vec<SightingInterval>,
    pub probes: Vec<ProbeObs>,
}

/// Dense BLE detections of one rotating MAC at one sensor: adverts arrive
/// every `period_ticks` ticks from `first_det` through `last_det`.
#[derive(Debug, Clone, PartialEq)]
pub struct SightingInterval {
    pub sensor: u32,
    pub mac: BtMac,
    pub first_det: f64,
    pub last_det: f64,
    pub period_ticks: u64,
    pub emitter: u32,
}

impl SightingInterval {
    /// Whether some advert of this sighting was detected inside [lo, hi].
    pub fn detection_in(&self, lo: f64, hi: f64) -> bool {
        if hi < self.first_det || lo > self.last_det {
            return false;
        }
        let lo = lo.max(self.first_det);
        let hi = hi.min(self.last_det);
        // Detections sit on the tick grid at first_det + k * period.
        let period = self.period_ticks as f64 * TICK_S;
        let k = ((lo - self.first_det) / period).ceil();
        self.first_det + k * period <= hi + 1e-9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeObs {
    pub sensor: u32,
    pub time: f64,
    pub tag: Tag,
    pub emitter: u32,
}

/// Output of a population run: compressed sensor observations plus ground
/// truth. The exact event-level engine is available for small populations
/// via [`engine::run_population_exact`].
#[derive(Debug, Clone, Default)]
pub struct PopulationOutput {
    pub observations: SensorObservations,
    pub ground_truth: GroundTruth,
    pub devices: Vec<DeviceState>,
}
