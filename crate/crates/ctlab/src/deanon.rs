//! Tag-based deanonymization of infected users.
//!
//! WiFi probe requests leak a stable (MAC, SSID) tag while BLE broadcasts
//! rotate. A sensor that hears a rotating MAC shortly after a probe learns
//! that the tag's owner is plausibly the broadcaster: the admission window
//! is the time a device needs to cross from WiFi range into Bluetooth
//! range and back, `2 (r_wifi - r_bt) / s` at the configured mean speed.
//! Tags that only ever co-occur with infected MACs, and do so most often,
//! name the infected user; a wardriving database then turns the SSID into
//! a home location.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::AttackError;
use crate::world::{BtMac, EventLog, Payload, PopulationOutput, SensorObservations, Tag};

/// Seconds between a probe and the latest BLE detection that can still
/// come from the same passing device.
pub fn admission_window(r_wifi: f64, r_bt: f64, mean_speed: f64) -> Result<f64, AttackError> {
    if mean_speed <= 0.0 {
        return Err(AttackError::NonPositiveSpeed(mean_speed));
    }
    Ok(2.0 * (r_wifi - r_bt) / mean_speed)
}

/// One admitted (rotating MAC, tag) co-occurrence at a sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TagPairRecord {
    pub sensor: u32,
    pub mac: BtMac,
    pub tag: Tag,
    /// First BLE detection of `mac` inside the admission window.
    pub t_bt: f64,
    /// Probe time.
    pub t_probe: f64,
}

/// Pairs tags with MACs from summarized sensor observations: a probe at
/// `t` admits every MAC with some BLE detection in `[t, t + window]` at
/// the same sensor.
pub fn collect_pairs(obs: &SensorObservations, window: f64) -> Vec<TagPairRecord> {
    let mut by_sensor: HashMap<u32, Vec<usize>> = HashMap::new();
    for (i, s) in obs.sightings.iter().enumerate() {
        by_sensor.entry(s.sensor).or_default().push(i);
    }
    let mut pairs = Vec::new();
    for probe in &obs.probes {
        let Some(sightings) = by_sensor.get(&probe.sensor) else { continue };
        let lo = probe.time;
        let hi = probe.time + window;
        for &i in sightings {
            let s = &obs.sightings[i];
            if !s.detection_in(lo, hi) {
                continue;
            }
            let period = s.period_ticks as f64 * crate::world::TICK_S;
            let k = ((lo.max(s.first_det) - s.first_det) / period).ceil();
            let t_bt = s.first_det + k * period;
            pairs.push(TagPairRecord {
                sensor: probe.sensor,
                mac: s.mac,
                tag: probe.tag.clone(),
                t_bt,
                t_probe: probe.time,
            });
        }
    }
    pairs.sort_by(|a, b| {
        (a.sensor, a.mac, &a.tag)
            .cmp(&(b.sensor, b.mac, &b.tag))
            .then(a.t_probe.partial_cmp(&b.t_probe).unwrap())
    });
    pairs.dedup_by(|a, b| a.sensor == b.sensor && a.mac == b.mac && a.tag == b.tag);
    pairs
}

/// Same pairing over a raw event log (placed scenarios): the receiver id
/// plays the sensor role.
pub fn collect_pairs_from_events(events: &EventLog, window: f64) -> Vec<TagPairRecord> {
    // (receiver, mac) -> detection times
    let mut detections: BTreeMap<(u32, BtMac), Vec<f64>> = BTreeMap::new();
    for e in &events.events {
        if let Payload::BtAdvert { mac, .. } = &e.payload {
            detections.entry((e.receiver, *mac)).or_default().push(e.time);
        }
    }
    let mut pairs = Vec::new();
    for e in &events.events {
        let Payload::WifiProbe { tag } = &e.payload else { continue };
        for ((receiver, mac), times) in &detections {
            if *receiver != e.receiver {
                continue;
            }
            let hit = times
                .iter()
                .find(|&&t| t >= e.time - 1e-9 && t <= e.time + window + 1e-9);
            if let Some(&t_bt) = hit {
                pairs.push(TagPairRecord {
                    sensor: e.receiver,
                    mac: *mac,
                    tag: tag.clone(),
                    t_bt,
                    t_probe: e.time,
                });
            }
        }
    }
    pairs.sort_by(|a, b| {
        (a.sensor, a.mac, &a.tag)
            .cmp(&(b.sensor, b.mac, &b.tag))
            .then(a.t_probe.partial_cmp(&b.t_probe).unwrap())
    });
    pairs.dedup_by(|a, b| a.sensor == b.sensor && a.mac == b.mac && a.tag == b.tag);
    pairs
}

/// Attacker-side matching result over the whole pair list.
#[derive(Debug, Clone, Default)]
pub struct TagMatch {
    /// Tags that co-occur only with infected MACs.
    pub candidates: BTreeSet<Tag>,
    /// Admitted pair count per candidate tag.
    pub counts: BTreeMap<Tag, usize>,
}

/// Filters tags against the infected MAC set: a tag qualifies iff it was
/// paired with an infected MAC at least once and never with a clean one.
pub fn match_tags(pairs: &[TagPairRecord], infected_macs: &BTreeSet<BtMac>) -> TagMatch {
    let mut seen_infected: BTreeSet<&Tag> = BTreeSet::new();
    let mut seen_clean: BTreeSet<&Tag> = BTreeSet::new();
    for p in pairs {
        if infected_macs.contains(&p.mac) {
            seen_infected.insert(&p.tag);
        } else {
            seen_clean.insert(&p.tag);
        }
    }
    let mut m = TagMatch::default();
    for tag in seen_infected.difference(&seen_clean) {
        m.candidates.insert((*tag).clone());
    }
    for p in pairs {
        if m.candidates.contains(&p.tag) {
            *m.counts.entry(p.tag.clone()).or_insert(0) += 1;
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TagOutcome {
    Identified(Tag),
    Ambiguous,
    Missed,
}

/// Picks the tag for one infected user given the pairs involving that
/// user's MACs: the most frequent candidate wins, a tie is ambiguous.
pub fn attribute(device_pairs: &[&TagPairRecord], matched: &TagMatch) -> TagOutcome {
    let mut counts: BTreeMap<&Tag, usize> = BTreeMap::new();
    for p in device_pairs {
        if matched.candidates.contains(&p.tag) {
            *counts.entry(&p.tag).or_insert(0) += 1;
        }
    }
    let Some(best) = counts.values().copied().max() else { return TagOutcome::Missed };
    let winners: Vec<&Tag> = counts
        .iter()
        .filter(|(_, &c)| c == best)
        .map(|(t, _)| *t)
        .collect();
    if winners.len() == 1 {
        TagOutcome::Identified(winners[0].clone())
    } else {
        TagOutcome::Ambiguous
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeanonScore {
    /// Infected users with a probing tag (the scoring denominator).
    pub targets: u32,
    pub identified: u32,
    pub misidentified: u32,
    pub ambiguous: u32,
    pub missed: u32,
    pub detection_rate: f64,
}

/// Scores the attack on a finished population run. Ground truth is used
/// for two things only: standing in for the code-matching step that
/// reveals which rotating MACs were infected, and checking the verdicts.
pub fn score_population(out: &PopulationOutput, window: f64) -> DeanonScore {
    let pairs = collect_pairs(&out.observations, window);
    let infected_macs = out.ground_truth.infected_macs();
    let matched = match_tags(&pairs, &infected_macs);

    let mut by_mac: HashMap<BtMac, Vec<&TagPairRecord>> = HashMap::new();
    for p in &pairs {
        by_mac.entry(p.mac).or_default().push(p);
    }
    let mut device_macs: HashMap<u32, Vec<BtMac>> = HashMap::new();
    for (mac, owner) in &out.ground_truth.mac_owner {
        device_macs.entry(*owner).or_default().push(*mac);
    }

    let mut score = DeanonScore::default();
    for id in &out.ground_truth.infected {
        let tags = &out.ground_truth.device_tags[id];
        let Some(home) = tags.first() else { continue }; // WiFi off: not a target
        score.targets += 1;
        let mut device_pairs: Vec<&TagPairRecord> = Vec::new();
        if let Some(macs) = device_macs.get(id) {
            for mac in macs {
                if let Some(ps) = by_mac.get(mac) {
                    device_pairs.extend(ps.iter().copied());
                }
            }
        }
        match attribute(&device_pairs, &matched) {
            TagOutcome::Identified(tag) if tag == *home => score.identified += 1,
            TagOutcome::Identified(_) => score.misidentified += 1,
            TagOutcome::Ambiguous => score.ambiguous += 1,
            TagOutcome::Missed => score.missed += 1,
        }
    }
    score.detection_rate =
        if score.targets > 0 { score.identified as f64 / score.targets as f64 } else { 0.0 };
    score
}

/// Mean detection rate of full Table-6 runs over a seed range.
pub fn sweep_detection_rate(
    params: &crate::world::Table6Params,
    seeds: std::ops::Range<u64>,
) -> Result<f64, crate::error::ConfigError> {
    let clock = crate::protocol::EpochClock::default();
    let window = admission_window(params.r_wifi, params.r_bt, params.mean_speed())
        .expect("validated speed range");
    let mut total = 0.0;
    let mut n = 0u32;
    for seed in seeds {
        let out = crate::world::population::run_population(params, seed, &clock)?;
        total += score_population(&out, window).detection_rate;
        n += 1;
    }
    Ok(if n > 0 { total / n as f64 } else { 0.0 })
}

/// Wardriving lookup: SSID to geographic coordinates.
#[derive(Debug, Clone, Default)]
pub struct SsidLocator {
    map: HashMap<String, (f64, f64)>,
}

impl SsidLocator {
    pub fn insert(&mut self, ssid: impl Into<String>, lat: f64, lon: f64) {
        self.map.insert(ssid.into(), (lat, lon));
    }

    pub fn locate(&self, ssid: &str) -> Option<(f64, f64)> {
        self.map.get(ssid).copied()
    }

    /// Loads `ssid,lat,lon` rows (with header) from CSV.
    pub fn from_csv<R: std::io::Read>(r: R) -> csv::Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut out = Self::default();
        for rec in rdr.records() {
            let rec = rec?;
            let lat: f64 = rec[1].parse().unwrap_or(f64::NAN);
            let lon: f64 = rec[2].parse().unwrap_or(f64::NAN);
            out.insert(rec[0].to_string(), lat, lon);
        }
        Ok(out)
    }
}
